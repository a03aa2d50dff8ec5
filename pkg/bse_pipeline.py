import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from bse_errors import BseError, InputError, NumericalError
from bse_rank1 import DemixingSet, Rank1Model, back_project, project_to_reference, run_ilrma, select_target_channel
from bse_rcscme import EmResult, PriorConfig, iterate_em, wiener_extract
from bse_rcscme import run as run_rcscme
from bse_scm import NoiseScmBundle, noise_scm
from bse_stft import FrameConfig, SpectrogramTensor, analyze, select_channels, synthesize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    window_ms: float = 64.0
    window_kind: str = "hamming"
    sample_rate_hz: int = 16000
    rank1: Rank1Model = field(default_factory=Rank1Model)
    prior: PriorConfig = field(default_factory=PriorConfig)
    full_image: bool = False
    reference_channel: int = 0

    def frame_config(self, sample_rate_hz=None) -> FrameConfig:
        return FrameConfig.from_milliseconds(sample_rate_hz or self.sample_rate_hz, self.window_ms, self.window_kind)


@dataclass
class Preprocessed:
    """Everything upstream of the EM: STFT, ILRMA demixing, target choice and noise SCM."""

    X: SpectrogramTensor
    demix: DemixingSet
    estimates: SpectrogramTensor
    target_channel: int
    bundle: NoiseScmBundle

    def baseline_image(self) -> np.ndarray:
        """ILRMA-only target image, back-projected to all microphones, time domain."""
        return synthesize(back_project(self.estimates, self.demix, [self.target_channel]))


@dataclass
class PipelineResult:
    preprocessed: Preprocessed
    em: EmResult
    image: np.ndarray  # (samples, M) extracted target image
    output: np.ndarray  # reference channel (samples, 1) or the full image
    sample_rate_hz: int
    iterations: int

    def report(self):
        diagnostics = self.em.diagnostics
        summary = {}
        if not diagnostics.empty:
            summary = {
                "initial_map_objective": float(diagnostics["map_objective"].iloc[0]),
                "final_map_objective": float(diagnostics["map_objective"].iloc[-1]),
                "min_eigenvalue": float(diagnostics["min_eigenvalue"].min()),
            }
        return {
            "target_channel": self.preprocessed.target_channel,
            "variant": self.em.final_state.variant,
            "iterations": self.iterations,
            "n_channels": self.preprocessed.X.n_channels,
            "n_frames": self.preprocessed.X.n_frames,
            "sample_rate_hz": self.sample_rate_hz,
            "diagnostics": summary,
        }


@contextmanager
def _stage(name):
    try:
        yield
    except BseError:
        raise
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"{name} failed: {str(e)}", stage=name) from e


class ExtractionPipeline:
    """STFT -> ILRMA -> kurtosis target selection -> noise SCM -> RCSCME -> Wiener -> inverse STFT."""

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()

    def preprocess(self, signal, sample_rate_hz) -> Preprocessed:
        signal = np.asarray(signal, dtype=np.float64)
        if signal.ndim != 2 or signal.shape[1] < 2:
            raise InputError(
                f"extraction needs a multichannel signal with at least 2 channels, got shape {signal.shape}",
                stage="pipeline",
            )
        if not 0 <= self.config.reference_channel < signal.shape[1]:
            raise InputError(
                f"reference channel {self.config.reference_channel} out of range for {signal.shape[1]} channels",
                stage="pipeline",
            )

        with _stage("stft"):
            X = analyze(signal, self.config.frame_config(sample_rate_hz))
        logger.info(f"STFT: {X.n_bins} bins x {X.n_frames} frames x {X.n_channels} channels")

        with _stage("rank1"):
            demix, estimates = run_ilrma(X, self.config.rank1)
            target_channel = select_target_channel(project_to_reference(estimates, demix, self.config.reference_channel))

        with _stage("scm"):
            bundle = noise_scm(X, demix, target_channel)

        return Preprocessed(X=X, demix=demix, estimates=estimates, target_channel=target_channel, bundle=bundle)

    def extract(self, pre: Preprocessed, prior: Optional[PriorConfig] = None) -> EmResult:
        prior = prior or self.config.prior
        with _stage("rcscme"):
            return run_rcscme(pre.X, pre.demix, pre.target_channel, pre.bundle, prior)

    def trajectory(self, pre: Preprocessed, prior: Optional[PriorConfig] = None) -> Iterator[Tuple[int, np.ndarray]]:
        """(iteration, time-domain target estimate on the reference channel) from the initialization onwards."""
        prior = prior or self.config.prior
        ref = self.config.reference_channel
        with _stage("rcscme"):
            for it, state, _ in iterate_em(pre.X, pre.demix, pre.target_channel, pre.bundle, prior):
                image = wiener_extract(pre.X, pre.bundle.a_target, state)
                yield it, synthesize(select_channels(image, [ref]))[:, 0]

    def run(self, signal, sample_rate_hz) -> PipelineResult:
        pre = self.preprocess(signal, sample_rate_hz)
        em = self.extract(pre)

        with _stage("stft"):
            image = synthesize(em.extracted)
        ref = self.config.reference_channel
        output = image if self.config.full_image else image[:, ref : ref + 1]
        logger.info(
            f"Extraction finished: target estimate {pre.target_channel}, {self.config.prior.variant} variant, "
            f"{'full image' if self.config.full_image else f'reference channel {ref}'}"
        )
        return PipelineResult(preprocessed=pre, em=em, image=image, output=output, sample_rate_hz=int(sample_rate_hz),
                              iterations=self.config.prior.n_iterations)
