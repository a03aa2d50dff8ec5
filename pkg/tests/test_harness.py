import numpy as np
import pytest
from scipy.stats import kurtosis

from bse_errors import InputError
from bse_harness import SceneConfig, make_mixture, synth_impulse_response, synth_noise, synth_speech
from bse_stft import FrameConfig, analyze


def mean_power(x):
    return np.mean(x ** 2)


def scm_eigenvalues(image, sample_rate_hz=16000):
    X = analyze(image, FrameConfig.from_milliseconds(sample_rate_hz)).data
    R = np.einsum("ijm,ijn->imn", X, X.conj()) / X.shape[1]
    return np.linalg.eigvalsh(R)


class TestSceneConfig:
    def test_defaults(self):
        cfg = SceneConfig()
        assert (cfg.n_mics, cfg.n_noise_directions, cfg.snr_db) == (3, 19, 0.0)
        assert cfg.n_samples == 64000
        assert cfg.is_diffuse

    @pytest.mark.parametrize("kwargs", [{"noise_kind": "pink"}, {"ir_taps": 128}, {"n_mics": 0}, {"duration_s": 0}, {"talker": -1}])
    def test_invalid(self, kwargs):
        with pytest.raises(InputError):
            SceneConfig(**kwargs)

    def test_noise_directions_avoid_target(self):
        directions = SceneConfig(n_noise_directions=4, target_direction_deg=90.0).noise_directions_deg()
        np.testing.assert_allclose(directions, [135.0, 225.0, 315.0, 405.0])


class TestSynthesis:
    def test_speech_is_super_gaussian(self, rng):
        speech = synth_speech(32000, 16000, rng)
        assert np.std(speech) == pytest.approx(1.0)
        assert kurtosis(speech) > 1.0

    def test_nonstationary_noise_level_wanders(self, rng):
        noise = synth_noise("nonstationary", 64000, 16000, rng)
        assert np.std(noise) == pytest.approx(1.0)
        block_power = np.mean(noise.reshape(16, 4000) ** 2, axis=1)
        assert block_power.max() / block_power.min() > 2.0

        stationary = np.mean(synth_noise("gaussian", 64000, 16000, rng).reshape(16, 4000) ** 2, axis=1)
        assert stationary.max() / stationary.min() < 1.2

    def test_impulse_response_shape(self, rng):
        cfg = SceneConfig(n_mics=4)
        ir = synth_impulse_response(45.0, cfg, rng, 0.5)
        assert ir.shape == (64, 4)
        assert np.all(np.isfinite(ir))


class TestMakeMixture:
    cfg = SceneConfig(duration_s=1.0)

    def test_snr_scaling(self):
        mix = make_mixture(self.cfg)
        ratio = mean_power(mix.target_image) / mean_power(mix.noise_image)
        assert ratio == pytest.approx(1.0, rel=1e-6)

    def test_other_snr(self):
        mix = make_mixture(SceneConfig(duration_s=1.0, snr_db=10.0))
        ratio = mean_power(mix.target_image) / mean_power(mix.noise_image)
        assert ratio == pytest.approx(10.0, rel=1e-6)

    def test_mixture_is_exact_sum(self):
        mix = make_mixture(self.cfg)
        np.testing.assert_array_equal(mix.mixture, mix.target_image + mix.noise_image)
        assert mix.mixture.shape == (16000, 3)

    def test_seed_determinism(self):
        first, again = make_mixture(self.cfg), make_mixture(self.cfg)
        np.testing.assert_array_equal(first.mixture, again.mixture)
        other = make_mixture(SceneConfig(duration_s=1.0, seed=1))
        assert not np.array_equal(first.mixture, other.mixture)

    def test_talker_changes_only_the_target(self):
        first = make_mixture(self.cfg)
        other = make_mixture(SceneConfig(duration_s=1.0, talker=1))
        assert not np.allclose(first.target_image, other.target_image)
        # The noise gain follows the target power, so compare normalized images
        np.testing.assert_allclose(first.noise_image / np.std(first.noise_image),
                                   other.noise_image / np.std(other.noise_image), rtol=1e-10, atol=1e-12)

    def test_seed_keeps_the_talker(self):
        first = make_mixture(self.cfg)
        other = make_mixture(SceneConfig(duration_s=1.0, seed=5))
        assert not np.allclose(first.noise_image, other.noise_image)
        # Same source signal through different responses: the dry target is shared
        assert np.corrcoef(first.target_image[:, 0], other.target_image[:, 0])[0, 1] > 0.5

    @pytest.mark.parametrize("kind", ["laplacian", "babble", "nonstationary"])
    def test_noise_kinds(self, kind):
        mix = make_mixture(SceneConfig(duration_s=1.0, noise_kind=kind))
        assert np.all(np.isfinite(mix.mixture))

    def test_user_sources_reused_cyclically(self, rng):
        target = rng.laplace(size=8000)
        noises = [rng.standard_normal(8000), rng.standard_normal(4000)]
        mix = make_mixture(SceneConfig(n_noise_directions=5), target=target, noises=noises)
        assert mix.mixture.shape == (8000, 3)

    def test_zero_power_rejected(self, rng):
        with pytest.raises(InputError):
            make_mixture(self.cfg, target=np.zeros(8000))
        with pytest.raises(InputError):
            make_mixture(self.cfg, target=rng.standard_normal(8000), noises=[np.zeros(8000)])
        with pytest.raises(InputError):
            make_mixture(self.cfg, target=np.array([]))

    def test_single_noise_direction_is_rank_one(self):
        mix = make_mixture(SceneConfig(duration_s=2.0, n_noise_directions=1))
        values = scm_eigenvalues(mix.noise_image)[1:-1]
        assert np.median(values[:, -2] / values[:, -1]) < 0.05

    @pytest.mark.parametrize("n_mics", [2, 3, 4])
    def test_diffuse_noise_is_full_rank(self, n_mics):
        mix = make_mixture(SceneConfig(duration_s=2.0, n_mics=n_mics, n_noise_directions=8))
        values = scm_eigenvalues(mix.noise_image)[1:-1]
        assert np.all(values[:, 0] >= 1e-3 * values[:, -1])
