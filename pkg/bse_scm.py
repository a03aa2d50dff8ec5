"""Rank-(M-1) diffuse-noise SCM built from the rank-1 preprocessing outputs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from bse_errors import InputError, NumericalError
from bse_rank1 import DemixingSet, back_project, demix_signals
from bse_stft import SpectrogramTensor

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-10
PSD_TOLERANCE = 1e-10
RANK_DEFICIENCY_TOLERANCE = 1e-8
SECOND_EIGENVALUE_RATIO = 1e-6


@dataclass
class NoiseScmBundle:
    R_prime: np.ndarray  # (I, M, M)
    u: np.ndarray  # (I, M), unit null vectors
    sigma_min_pos: np.ndarray  # (I,)
    a_target: np.ndarray  # (I, M)
    eigenvalues: np.ndarray  # (I, M), ascending

    @property
    def n_bins(self):
        return self.R_prime.shape[0]

    @property
    def n_channels(self):
        return self.R_prime.shape[-1]


def hermitian_part(H):
    return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))


def _fix_phase(V):
    # Largest-magnitude entry of every eigenvector made real positive
    idx = np.argmax(np.abs(V), axis=-2)
    pivots = np.take_along_axis(V, idx[..., None, :], axis=-2)
    phase = pivots / np.abs(pivots)
    return V / phase


def eig_hermitian(H):
    """Ascending eigenvalues and orthonormal eigenvectors of one or a stack of Hermitian matrices."""
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise InputError(f"expected square matrices, got shape {H.shape}", stage="scm")

    scale = np.linalg.norm(H, axis=(-2, -1))
    skew = np.linalg.norm(H - np.conj(np.swapaxes(H, -1, -2)), axis=(-2, -1))
    if np.any(skew > HERMITIAN_TOLERANCE * np.maximum(scale, 1.0)):
        raise NumericalError(f"matrix not Hermitian (skew norm {np.max(skew):.3e})", stage="scm")

    eigenvalues, V = np.linalg.eigh(hermitian_part(H))
    return eigenvalues, _fix_phase(V)


def noise_scm(X: SpectrogramTensor, demix: DemixingSet, target_channel: int) -> NoiseScmBundle:
    """
    R'_i = (1/J) sum_j y_ij y_ij^H with y_ij the back-projected sum of every
    estimate except the target one.
    """
    n_bins, n_frames, n_chan = X.data.shape
    if n_frames == 0:
        raise InputError("noise SCM needs at least one frame", stage="scm")
    if not 0 <= target_channel < n_chan:
        raise InputError(f"target channel {target_channel} out of range 0..{n_chan - 1}", stage="scm")

    estimates = X.with_data(demix_signals(X, demix))
    noise_only = [m for m in range(n_chan) if m != target_channel]
    y_noise = back_project(estimates, demix, noise_only).data

    R_prime = hermitian_part(np.einsum("ijm,ijn->imn", y_noise, y_noise.conj()) / n_frames)
    eigenvalues, V = eig_hermitian(R_prime)

    largest = eigenvalues[:, -1]
    if np.any(largest <= 0.0):
        bins = np.flatnonzero(largest <= 0.0)
        raise NumericalError(
            f"noise SCM has no positive eigenvalue at {len(bins)} bins (first: {bins[0]})", stage="scm"
        )
    if np.any(eigenvalues[:, 0] < -PSD_TOLERANCE * largest):
        raise NumericalError("noise SCM is not positive semidefinite", stage="scm")
    if np.any(eigenvalues[:, 0] > RANK_DEFICIENCY_TOLERANCE * largest):
        raise NumericalError("noise SCM is not rank deficient; check the demixing set", stage="scm")
    if n_chan > 2 and np.any(eigenvalues[:, 1] < SECOND_EIGENVALUE_RATIO * largest):
        bins = np.flatnonzero(eigenvalues[:, 1] < SECOND_EIGENVALUE_RATIO * largest)
        raise NumericalError(
            f"noise SCM has more than one near-zero eigenvalue at {len(bins)} bins (first: {bins[0]})",
            stage="scm",
        )

    bundle = NoiseScmBundle(
        R_prime=R_prime,
        u=np.ascontiguousarray(V[:, :, 0]),
        sigma_min_pos=eigenvalues[:, 1].copy(),
        a_target=np.ascontiguousarray(demix.steering_vector(target_channel)),
        eigenvalues=eigenvalues,
    )
    logger.info(
        f"Noise SCM built for {n_bins} bins, target channel {target_channel}, "
        f"median sigma {np.median(bundle.sigma_min_pos):.3e}"
    )
    return bundle


def save_bundle(bundle: NoiseScmBundle, path):
    """
    Diagnostic dump: little-endian int32 header (I, M) followed by one block per
    frequency holding R'_i (row-major), u_i, a_target_i and sigma_i, all complex64.
    """
    n_bins, n_chan = bundle.n_bins, bundle.n_channels
    blocks = np.concatenate(
        [
            bundle.R_prime.reshape(n_bins, n_chan * n_chan),
            bundle.u,
            bundle.a_target,
            bundle.sigma_min_pos[:, None].astype(np.complex128),
        ],
        axis=1,
    )
    with open(path, "wb") as f:
        f.write(np.array([n_bins, n_chan], dtype="<i4").tobytes())
        f.write(blocks.astype("<c8").tobytes())
    logger.info(f"Noise SCM bundle written to {path}")


def load_bundle(path) -> NoiseScmBundle:
    with open(path, "rb") as f:
        raw = f.read()
    n_bins, n_chan = np.frombuffer(raw[:8], dtype="<i4")
    width = n_chan * n_chan + 2 * n_chan + 1
    blocks = np.frombuffer(raw[8:], dtype="<c8").reshape(n_bins, width).astype(np.complex128)

    R_prime = blocks[:, : n_chan * n_chan].reshape(n_bins, n_chan, n_chan)
    offset = n_chan * n_chan
    u = blocks[:, offset : offset + n_chan]
    a_target = blocks[:, offset + n_chan : offset + 2 * n_chan]
    sigma = blocks[:, -1].real
    eigenvalues = np.linalg.eigvalsh(hermitian_part(R_prime))
    return NoiseScmBundle(R_prime=R_prime, u=u, sigma_min_pos=sigma, a_target=a_target, eigenvalues=eigenvalues)
