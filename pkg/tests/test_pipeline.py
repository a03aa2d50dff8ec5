import numpy as np
import pytest

from bse_errors import InputError
from bse_harness import SceneConfig, make_mixture, synth_speech
from bse_metrics import evaluate_run, sdr
from bse_pipeline import ExtractionPipeline, PipelineConfig
from bse_rank1 import Rank1Model, project_to_reference
from bse_rcscme import PriorConfig
from bse_stft import synthesize

FAST = PipelineConfig(rank1=Rank1Model(n_iterations=20), prior=PriorConfig(n_iterations=10))


def two_mic_recording(rng, n_samples=32000, floor_db=-60.0):
    """One talker reaching the second microphone 2 samples later at 0.8 gain, plus a sensor floor."""
    s = synth_speech(n_samples, 16000, rng)
    clean = np.zeros((n_samples, 2))
    clean[:, 0] = s
    clean[2:, 1] = 0.8 * s[:-2]
    floor = 10.0 ** (floor_db / 20.0) * rng.standard_normal((n_samples, 2))
    return clean, clean + floor


def test_noiseless_single_talker(rng):
    clean, recording = two_mic_recording(rng)
    result = ExtractionPipeline(FAST).run(recording, 16000)
    assert result.output.shape == (32000, 1)
    assert sdr(result.output[:, 0], clean[:, 0]) >= 30.0


def test_full_image_output(rng):
    _, recording = two_mic_recording(rng, n_samples=16000)
    config = PipelineConfig(rank1=Rank1Model(n_iterations=5), prior=PriorConfig(n_iterations=2), full_image=True)
    result = ExtractionPipeline(config).run(recording, 16000)
    assert result.output.shape == (16000, 2)

    report = result.report()
    assert report["iterations"] == 2
    assert report["variant"] == "proposed"
    assert report["target_channel"] in (0, 1)
    assert set(report["diagnostics"]) == {"initial_map_objective", "final_map_objective", "min_eigenvalue"}


def test_mono_input_rejected(rng):
    with pytest.raises(InputError):
        ExtractionPipeline(FAST).run(rng.standard_normal((16000, 1)), 16000)


def test_rerun_is_bit_identical():
    mix = make_mixture(SceneConfig(duration_s=1.0))
    config = PipelineConfig(rank1=Rank1Model(n_iterations=5), prior=PriorConfig(n_iterations=3))
    first = ExtractionPipeline(config).run(mix.mixture, mix.sample_rate_hz)
    again = ExtractionPipeline(config).run(mix.mixture, mix.sample_rate_hz)
    np.testing.assert_array_equal(first.output, again.output)


def test_diffuse_scene_trajectory_and_baseline():
    mix = make_mixture(SceneConfig(duration_s=2.0))
    pipeline = ExtractionPipeline(PipelineConfig(rank1=Rank1Model(n_iterations=20)))
    pre = pipeline.preprocess(mix.mixture, mix.sample_rate_hz)

    baseline = pre.baseline_image()
    assert baseline.shape == mix.mixture.shape

    prior = PriorConfig(n_iterations=5)
    report = evaluate_run(pipeline.trajectory(pre, prior), mix.target_image[:, 0], mix.mixture[:, 0], method="proposed")
    assert [it for it, _ in report.per_iteration] == list(range(6))
    assert np.all(np.isfinite([score for _, score in report.per_iteration]))

    result = pipeline.extract(pre, prior)
    assert np.all(result.diagnostics["min_eigenvalue"] > 0)
    final = synthesize(result.extracted)[:, 0]
    assert report.sdr_db == pytest.approx(sdr(final, mix.target_image[:, 0]), abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_selected_estimate_has_best_sdr(seed):
    mix = make_mixture(SceneConfig(duration_s=3.0, seed=seed, target_direction_deg=90.0 * seed))
    pre = ExtractionPipeline(PipelineConfig(rank1=Rank1Model(seed=seed))).preprocess(mix.mixture, mix.sample_rate_hz)

    images = synthesize(project_to_reference(pre.estimates, pre.demix, 0))
    scores = [sdr(images[:, m], mix.target_image[:, 0]) for m in range(images.shape[1])]
    assert pre.target_channel == int(np.argmax(scores))
