"""Rank-1 preprocessing: ILRMA demixing, back projection and kurtosis-based target selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np
from scipy.stats import kurtosis

from bse_errors import InputError, NumericalError
from bse_stft import SpectrogramTensor, synthesize

logger = logging.getLogger(__name__)

NMF_FLOOR = 1e-12
COVARIANCE_LOADING = 1e-12
MAX_CONDITION = 1e12


@dataclass
class DemixingSet:
    """Per-frequency demixing matrices W_i (rows w_{i,m}^H) and mixing matrices A_i = W_i^{-1}."""

    W: np.ndarray
    A: np.ndarray

    @classmethod
    def from_demixing(cls, W):
        W = np.asarray(W, dtype=np.complex128)
        cond = np.linalg.cond(W)
        bad = ~np.isfinite(cond) | (cond > MAX_CONDITION)
        if np.any(bad):
            bins = np.flatnonzero(bad)
            raise NumericalError(
                f"demixing matrix numerically singular at {len(bins)} bins (first: {bins[0]})",
                stage="rank1",
            )
        return cls(W=W, A=np.linalg.inv(W))

    @property
    def n_channels(self):
        return self.W.shape[-1]

    def steering_vector(self, channel):
        """Column `channel` of A_i for every frequency, shape (I, M)."""
        return self.A[:, :, channel]


@dataclass(frozen=True)
class Rank1Model:
    n_bases: int = 10
    n_iterations: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n_bases <= 0 or self.n_iterations < 0:
            raise InputError("ILRMA needs n_bases > 0 and n_iterations >= 0", stage="rank1")


def demix_signals(X: SpectrogramTensor, demix: DemixingSet) -> np.ndarray:
    """y_ij = W_i x_ij, shape (I, J, M)."""
    return np.einsum("imn,ijn->ijm", demix.W, X.data)


def ilrma_cost(sep_pow, model_pow, W, n_frames):
    """ILRMA negative log-likelihood up to constants.

    sep_pow is (I, M, J), model_pow is (M, I, J).
    """
    p = sep_pow.transpose(1, 0, 2)
    _, logdet = np.linalg.slogdet(W)
    return float(np.sum(p / model_pow + np.log(model_pow)) - 2.0 * n_frames * np.sum(logdet))


class IlrmaSeparator:
    """
    ILRMA without partitioning: one NMF variance model per source and
    iterative-projection updates of the demixing rows.

    W starts at identity and the NMF factors at seeded uniform randoms.
    """

    def __init__(self, model: Rank1Model):
        self.model = model
        self.cost_history: List[float] = []
        self.basis = None
        self.activation = None

    def separate(self, X: SpectrogramTensor) -> Tuple[DemixingSet, SpectrogramTensor]:
        n_freq, n_frames, n_chan = X.data.shape
        if n_chan < 2:
            raise InputError(f"ILRMA needs at least 2 channels, got {n_chan}", stage="rank1")
        if n_frames < n_chan:
            raise InputError(
                f"ILRMA needs at least as many frames as channels ({n_frames} < {n_chan})",
                stage="rank1",
            )

        rng = np.random.default_rng(self.model.seed)
        n_bases = self.model.n_bases
        mix = np.ascontiguousarray(X.data.transpose(0, 2, 1))  # (I, M, J)
        mix_h = mix.conj().transpose(0, 2, 1)
        eye = np.eye(n_chan)

        W = np.tile(np.eye(n_chan, dtype=np.complex128), (n_freq, 1, 1))
        basis = np.maximum(rng.uniform(size=(n_chan, n_freq, n_bases)), NMF_FLOOR)
        act = np.maximum(rng.uniform(size=(n_chan, n_bases, n_frames)), NMF_FLOOR)
        model_pow = basis @ act  # (M, I, J)

        sep = W @ mix
        sep_pow = np.abs(sep) ** 2
        self.cost_history = [ilrma_cost(sep_pow, model_pow, W, n_frames)]

        for it in range(self.model.n_iterations):
            for src in range(n_chan):
                p = sep_pow[:, src, :]

                recip = 1.0 / model_pow[src]
                basis[src] *= np.sqrt(((p * recip ** 2) @ act[src].T) / (recip @ act[src].T))
                np.maximum(basis[src], NMF_FLOOR, out=basis[src])
                model_pow[src] = basis[src] @ act[src]

                recip = 1.0 / model_pow[src]
                act[src] *= np.sqrt((basis[src].T @ (p * recip ** 2)) / (basis[src].T @ recip))
                np.maximum(act[src], NMF_FLOOR, out=act[src])
                model_pow[src] = basis[src] @ act[src]

                # Iterative projection on the weighted covariance
                cov = (mix / model_pow[src][:, None, :]) @ mix_h / n_frames
                cov = 0.5 * (cov + cov.conj().transpose(0, 2, 1))
                loading = COVARIANCE_LOADING * np.real(np.trace(cov, axis1=1, axis2=2)) / n_chan
                cov = cov + loading[:, None, None] * eye

                try:
                    w = np.linalg.solve(W @ cov, np.broadcast_to(eye[:, src, None], (n_freq, n_chan, 1)))
                except np.linalg.LinAlgError as e:
                    raise NumericalError(f"singular demixing update for source {src}", stage="rank1") from e
                w = w[:, :, 0]
                scale = np.real(np.einsum("im,imn,in->i", w.conj(), cov, w))
                if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
                    raise NumericalError(f"degenerate demixing update for source {src}", stage="rank1")
                W[:, src, :] = (w / np.sqrt(scale)[:, None]).conj()

            np.matmul(W, mix, out=sep)
            sep_pow = np.abs(sep) ** 2

            # Scale normalization leaves the cost unchanged
            for src in range(n_chan):
                lbd = np.sqrt(np.mean(sep_pow[:, src, :]))
                if lbd <= 0.0:
                    logger.warning(f"ILRMA source {src} is silent at iteration {it}, skipping normalization")
                    continue
                W[:, src, :] /= lbd
                sep_pow[:, src, :] /= lbd ** 2
                model_pow[src] /= lbd ** 2
                basis[src] /= lbd ** 2

            np.matmul(W, mix, out=sep)
            self.cost_history.append(ilrma_cost(sep_pow, model_pow, W, n_frames))
            logger.debug(f"ILRMA iteration {it + 1}: cost {self.cost_history[-1]:.6e}")

        self.basis = basis
        self.activation = act
        demix = DemixingSet.from_demixing(W)
        estimates = X.with_data(np.ascontiguousarray(sep.transpose(0, 2, 1)))
        logger.info(
            f"ILRMA finished {self.model.n_iterations} iterations on {n_chan} channels, "
            f"final cost {self.cost_history[-1]:.6e}"
        )
        return demix, estimates


def run_ilrma(X: SpectrogramTensor, model: Rank1Model) -> Tuple[DemixingSet, SpectrogramTensor]:
    return IlrmaSeparator(model).separate(X)


def _check_keep(keep, n_channels):
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise InputError("back projection needs a non-empty channel subset", stage="rank1")
    if keep[0] < 0 or keep[-1] >= n_channels:
        raise InputError(f"channel subset {keep} out of range 0..{n_channels - 1}", stage="rank1")
    return keep


def back_project(estimates: SpectrogramTensor, demix: DemixingSet, keep: Iterable[int]) -> SpectrogramTensor:
    """M-channel image W_i^{-1} y_ij with the estimates outside `keep` zeroed."""
    keep = _check_keep(keep, demix.n_channels)
    mask = np.zeros(demix.n_channels)
    mask[keep] = 1.0
    image = np.einsum("imn,ijn->ijm", demix.A, estimates.data * mask)
    return estimates.with_data(image)


def project_to_reference(estimates: SpectrogramTensor, demix: DemixingSet, channel: int = 0) -> SpectrogramTensor:
    """Every estimate rescaled onto microphone `channel` (scale fixed by back projection)."""
    if not 0 <= channel < demix.n_channels:
        raise InputError(f"reference channel {channel} out of range", stage="rank1")
    return estimates.with_data(estimates.data * demix.A[:, None, channel, :])


def _interior(signals, frame_config):
    """Drop the edge samples covered by a single frame.

    There the overlap-add weight is w^2 alone, so demixed (inconsistent)
    spectrograms come back amplified by up to 1/w(0)^2.
    """
    margin = frame_config.window_length_samples
    if signals.shape[0] <= 3 * margin:
        return signals
    return signals[margin:-margin]


def select_target_channel(estimates: SpectrogramTensor) -> int:
    """Index of the estimate with the largest excess kurtosis in the time domain.

    Kurtosis is taken over the interior samples of each resynthesized estimate.
    Estimates with zero variance are excluded; ties go to the lowest index.
    """
    if estimates.n_channels < 2:
        raise InputError("target selection needs at least 2 estimates", stage="rank1")

    signals = _interior(synthesize(estimates), estimates.frame_config)
    scores = np.full(signals.shape[1], -np.inf)
    for m in range(signals.shape[1]):
        if np.var(signals[:, m]) <= np.finfo(np.float64).tiny:
            logger.warning(f"Estimate {m} has zero variance, excluded from target selection")
            continue
        scores[m] = kurtosis(signals[:, m], fisher=True)

    if not np.any(np.isfinite(scores)):
        raise NumericalError("all estimates have zero variance, kurtosis undefined", stage="rank1")

    target = int(np.argmax(scores))
    logger.info(f"Kurtosis per estimate: {np.round(scores, 3).tolist()}, target channel {target}")
    return target
