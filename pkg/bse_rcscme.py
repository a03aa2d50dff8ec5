"""
Rank-constrained SCM estimation (RCSCME) by MAP-EM and multichannel Wiener extraction.

Two variants share the E-step and differ in how the deficient basis of the
rank-(M-1) noise SCM is completed:

- conventional: R_n = R' + lam * b b^H with b fixed to the null vector u of R'
  and only the scale lam estimated;
- proposed: R_n = R' + c c^H with the vector c estimated freely through
  c = T u / sqrt(u^H T u).

Arrays are indexed (frequency i, frame j, channel m).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaln

from bse_errors import InputError, NumericalError
from bse_rank1 import DemixingSet
from bse_scm import NoiseScmBundle, hermitian_part
from bse_stft import SpectrogramTensor

logger = logging.getLogger(__name__)

VARIANTS = ("conventional", "proposed")
DEFAULT_ALPHA = {"conventional": 2.5, "proposed": 0.1}
DEFAULT_BETA = 1e-16
DEFAULT_EM_ITERATIONS = 200

NOISE_VARIANCE_FLOOR = 1e-16
TARGET_VARIANCE_FLOOR = np.finfo(np.float64).tiny
MAP_SLACK = 1e-6


@dataclass(frozen=True)
class PriorConfig:
    """Inverse-gamma prior IG(alpha, beta) on the target variance and the EM variant."""

    variant: str = "proposed"
    alpha: Optional[float] = None
    beta: float = DEFAULT_BETA
    n_iterations: int = DEFAULT_EM_ITERATIONS

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InputError(f"unknown variant '{self.variant}', expected one of {VARIANTS}", stage="rcscme")
        if self.alpha is None:
            object.__setattr__(self, "alpha", DEFAULT_ALPHA[self.variant])
        if not self.alpha > 0 or not self.beta > 0:
            raise InputError(f"prior needs alpha > 0 and beta > 0, got {self.alpha}, {self.beta}", stage="rcscme")
        if self.n_iterations < 0:
            raise InputError("n_iterations must be non-negative", stage="rcscme")


@dataclass
class EmState:
    r_t: np.ndarray  # (I, J)
    r_n: np.ndarray  # (I, J)
    R_prime: np.ndarray  # (I, M, M)
    variant: str
    lam: Optional[np.ndarray] = None  # (I,), conventional
    b: Optional[np.ndarray] = None  # (I, M), conventional, unit
    c: Optional[np.ndarray] = None  # (I, M), proposed

    @property
    def deficient_basis(self):
        """The rank-one completion as a vector v with R_n = R' + v v^H."""
        if self.variant == "conventional":
            return np.sqrt(self.lam)[:, None] * self.b
        return self.c

    @property
    def R_n(self):
        v = self.deficient_basis
        return hermitian_part(self.R_prime + v[:, :, None] * v[:, None, :].conj())

    @property
    def n_frames(self):
        return self.r_t.shape[1]


@dataclass
class PosteriorStats:
    r_hat_t: np.ndarray  # (I, J)
    R_hat_n: np.ndarray  # (I, J, M, M)
    T_hat: np.ndarray  # (I, M, M)


@dataclass
class EmResult:
    final_state: EmState
    extracted: SpectrogramTensor  # plain (I, J, M) array when run on a raw array
    diagnostics: pd.DataFrame

    def save_diagnostics(self, filename):
        self.diagnostics.to_csv(filename, index=False)
        logger.info(f"EM diagnostics saved to {filename}")


def _observations(X):
    return X.data if isinstance(X, SpectrogramTensor) else np.asarray(X)


def _solve(A, B, what):
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"singular {what}", stage="rcscme") from e


def _cholesky_logdet(R, what):
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"{what} is not positive definite", stage="rcscme") from e
    return 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)


def min_eigenvalue(R):
    return float(np.min(np.linalg.eigvalsh(R)))


def _check_positive_definite(R_n):
    smallest = min_eigenvalue(R_n)
    if not smallest > 0.0:
        raise NumericalError(f"noise SCM lost positive definiteness (min eigenvalue {smallest:.3e})", stage="rcscme")
    return smallest


def mixture_covariance(a, state: EmState):
    """R^x_ij = r_t a a^H + r_n R_n, shape (I, J, M, M)."""
    aa = a[:, :, None] * a[:, None, :].conj()
    Rx = state.r_t[..., None, None] * aa[:, None] + state.r_n[..., None, None] * state.R_n[:, None]
    return hermitian_part(Rx)


def initial_state(X, demix: DemixingSet, target_channel: int, bundle: NoiseScmBundle, prior: PriorConfig) -> EmState:
    """
    r_t from the power of the target ILRMA estimate, r_n = 1, and the deficient
    basis from the smallest positive eigenvalue: lam = sigma (conventional),
    c = sqrt(sigma) u (proposed).
    """
    x = _observations(X)
    y_target = np.einsum("in,ijn->ij", demix.W[:, target_channel, :], x)
    r_t = np.maximum(np.abs(y_target) ** 2, prior.beta / (prior.alpha + 2.0))
    r_n = np.ones_like(r_t)

    if prior.variant == "conventional":
        return EmState(r_t=r_t, r_n=r_n, R_prime=bundle.R_prime, variant="conventional",
                       lam=bundle.sigma_min_pos.copy(), b=bundle.u.copy())
    return EmState(r_t=r_t, r_n=r_n, R_prime=bundle.R_prime, variant="proposed",
                   c=np.sqrt(bundle.sigma_min_pos)[:, None] * bundle.u)


def e_step(X, a_target, state: EmState) -> PosteriorStats:
    """Posterior second moments of the target source and the noise image."""
    x = _observations(X)
    a = np.asarray(a_target)
    n_bins, n_frames, n_chan = x.shape
    R_n = state.R_n
    Rx = mixture_covariance(a, state)

    rhs = np.concatenate(
        [
            np.broadcast_to(a[:, None, :, None], (n_bins, n_frames, n_chan, 1)),
            x[..., None],
            np.broadcast_to(R_n[:, None], (n_bins, n_frames, n_chan, n_chan)),
        ],
        axis=-1,
    )
    sol = _solve(Rx, rhs, "mixture covariance")
    inv_a, inv_x, inv_Rn = sol[..., 0], sol[..., 1], sol[..., 2:]

    r_t, r_n = state.r_t, state.r_n
    a_inv_a = np.real(np.einsum("im,ijm->ij", a.conj(), inv_a))
    a_inv_x = np.einsum("im,ijm->ij", a.conj(), inv_x)
    r_hat_t = r_t - r_t ** 2 * a_inv_a + np.abs(r_t * a_inv_x) ** 2
    r_hat_t = np.maximum(r_hat_t, 0.0)

    noise_mean = r_n[..., None] * np.einsum("imn,ijn->ijm", R_n, inv_x)
    R_hat_n = (
        r_n[..., None, None] * R_n[:, None]
        - (r_n ** 2)[..., None, None] * np.einsum("imk,ijkn->ijmn", R_n, inv_Rn)
        + noise_mean[..., :, None] * noise_mean[..., None, :].conj()
    )
    R_hat_n = hermitian_part(R_hat_n)
    T_hat = hermitian_part(np.mean(R_hat_n / r_n[..., None, None], axis=1))

    if not (np.all(np.isfinite(r_hat_t)) and np.all(np.isfinite(T_hat))):
        raise NumericalError("non-finite posterior statistics", stage="rcscme")
    return PosteriorStats(r_hat_t=r_hat_t, R_hat_n=R_hat_n, T_hat=T_hat)


def _update_target_variance(stats: PosteriorStats, prior: PriorConfig):
    return np.maximum((stats.r_hat_t + prior.beta) / (prior.alpha + 2.0), TARGET_VARIANCE_FLOOR)


def _update_noise_variance(stats: PosteriorStats, R_n):
    n_chan = R_n.shape[-1]
    ratio = _solve(np.broadcast_to(R_n[:, None], stats.R_hat_n.shape), stats.R_hat_n, "noise SCM")
    r_n = np.real(np.trace(ratio, axis1=-2, axis2=-1)) / n_chan
    return np.maximum(r_n, NOISE_VARIANCE_FLOOR)


def _quadratic(u, T):
    return np.real(np.einsum("im,imn,in->i", u.conj(), T, u))


def m_step_conventional(stats: PosteriorStats, bundle: NoiseScmBundle, prior: PriorConfig, state: EmState) -> EmState:
    """Scale-only update of the deficient basis, direction b fixed."""
    u = bundle.u
    b = state.b if state.b is not None else u
    bu = np.abs(np.einsum("im,im->i", b.conj(), u)) ** 2
    if np.any(bu <= 0.0):
        raise NumericalError("deficient basis orthogonal to the null vector", stage="rcscme")

    r_t = _update_target_variance(stats, prior)
    lam = _quadratic(u, stats.T_hat) / bu
    if np.any(lam <= 0.0):
        raise NumericalError("non-positive deficient-basis scale", stage="rcscme")

    new_state = replace(state, r_t=r_t, lam=lam, b=b, c=None, variant="conventional")
    R_n = new_state.R_n
    _check_positive_definite(R_n)
    new_state.r_n = _update_noise_variance(stats, R_n)
    return new_state


def m_step_proposed(stats: PosteriorStats, bundle: NoiseScmBundle, prior: PriorConfig, state: EmState) -> EmState:
    """Vector update c = T u / sqrt(u^H T u) (phase 0)."""
    u = bundle.u
    tau = _quadratic(u, stats.T_hat)
    if np.any(tau <= 0.0):
        bins = np.flatnonzero(tau <= 0.0)
        raise NumericalError(f"u^H T u is not positive at {len(bins)} bins", stage="rcscme")

    r_t = _update_target_variance(stats, prior)
    c = np.einsum("imn,in->im", stats.T_hat, u) / np.sqrt(tau)[:, None]

    new_state = replace(state, r_t=r_t, c=c, lam=None, b=None, variant="proposed")
    R_n = new_state.R_n
    _check_positive_definite(R_n)
    new_state.r_n = _update_noise_variance(stats, R_n)
    return new_state


def claim1_identity(R_prime, c, u):
    """|| (R' + c c^H)^{-1} c - u / (c^H u) || for R' u = 0."""
    R_prime = np.asarray(R_prime, dtype=np.complex128)
    c = np.asarray(c, dtype=np.complex128)
    u = np.asarray(u, dtype=np.complex128)

    scale = np.linalg.norm(R_prime)
    if np.linalg.norm(R_prime @ u) > 1e-8 * max(scale, 1.0) * np.linalg.norm(u):
        raise InputError("u is not a null vector of R'", stage="rcscme")
    cu = np.vdot(c, u)
    if np.abs(cu) <= np.finfo(np.float64).eps * np.linalg.norm(c) * np.linalg.norm(u):
        raise InputError("c^H u = 0: c lies in the column space of R'", stage="rcscme")

    lhs = _solve(R_prime + np.outer(c, c.conj()), c, "completed noise SCM")
    return float(np.linalg.norm(lhs - u / cu))


def q_function(state: EmState, stats: PosteriorStats, prior: PriorConfig) -> float:
    """Expected complete-data log-posterior, constants dropped."""
    R_n = state.R_n
    n_chan = R_n.shape[-1]
    n_frames = state.n_frames
    logdet = _cholesky_logdet(R_n, "noise SCM")
    ratio = _solve(np.broadcast_to(R_n[:, None], stats.R_hat_n.shape), stats.R_hat_n, "noise SCM")
    trace = np.real(np.trace(ratio, axis1=-2, axis2=-1))

    per_bin = (
        -(prior.alpha + 2.0) * np.log(state.r_t)
        - n_chan * np.log(state.r_n)
        - (stats.r_hat_t + prior.beta) / state.r_t
        - trace / state.r_n
    )
    return float(np.sum(per_bin) - n_frames * np.sum(logdet))


def q_gradient_c(state: EmState, stats: PosteriorStats):
    """
    dQ/dc* = -J R_n^{-1} c + J R_n^{-1} T R_n^{-1} c for every frequency, (I, M).

    Valid when `stats` came from an E-step at the same r_n as `state`.
    """
    R_n = state.R_n
    c = state.deficient_basis
    n_frames = state.n_frames
    inv_c = _solve(R_n, c[..., None], "noise SCM")
    inner = _solve(R_n, stats.T_hat @ inv_c, "noise SCM")
    return n_frames * (inner - inv_c)[..., 0]


def map_objective(X, a_target, state: EmState, prior: PriorConfig) -> float:
    """log N_c(x; 0, R^x) summed over (i, j) plus the inverse-gamma log-prior on r_t."""
    x = _observations(X)
    n_chan = x.shape[-1]
    Rx = mixture_covariance(np.asarray(a_target), state)
    logdet = _cholesky_logdet(Rx, "mixture covariance")
    inv_x = _solve(Rx, x[..., None], "mixture covariance")[..., 0]
    quad = np.real(np.einsum("ijm,ijm->ij", x.conj(), inv_x))

    log_likelihood = np.sum(-n_chan * np.log(np.pi) - logdet - quad)
    alpha, beta = prior.alpha, prior.beta
    log_prior = np.sum(alpha * np.log(beta) - gammaln(alpha) - (alpha + 1.0) * np.log(state.r_t) - beta / state.r_t)
    return float(log_likelihood + log_prior)


def wiener_extract(X, a_target, state: EmState) -> SpectrogramTensor:
    """Posterior mean of the target image, r_t a a^H (R^x)^{-1} x."""
    x = _observations(X)
    a = np.asarray(a_target)
    inv_x = _solve(mixture_covariance(a, state), x[..., None], "mixture covariance")[..., 0]
    gain = state.r_t * np.einsum("im,ijm->ij", a.conj(), inv_x)
    image = gain[..., None] * a[:, None, :]
    if isinstance(X, SpectrogramTensor):
        return X.with_data(image)
    return image


def iterate_em(X, demix: DemixingSet, target_channel: int, bundle: NoiseScmBundle,
               prior: PriorConfig) -> Iterator[Tuple[int, EmState, Optional[PosteriorStats]]]:
    """
    Yield (iteration, state, stats) for the initial state (stats None) and after
    every M-step; stats are the E-step statistics the state was updated from.
    """
    a = bundle.a_target
    m_step = m_step_conventional if prior.variant == "conventional" else m_step_proposed
    state = initial_state(X, demix, target_channel, bundle, prior)
    yield 0, state, None

    for it in range(1, prior.n_iterations + 1):
        stats = e_step(X, a, state)
        state = m_step(stats, bundle, prior, state)
        yield it, state, stats


def run(
    X,
    demix: DemixingSet,
    target_channel: int,
    bundle: NoiseScmBundle,
    prior: PriorConfig,
) -> EmResult:
    """Alternate the E-step and the variant's M-step for prior.n_iterations, then Wiener-extract."""
    a = bundle.a_target
    rows = []
    previous_map = None

    for it, state, stats in iterate_em(X, demix, target_channel, bundle, prior):
        current_map = map_objective(X, a, state, prior)
        q_value = np.nan if stats is None else q_function(state, stats, prior)
        if previous_map is not None and current_map < previous_map - MAP_SLACK * abs(previous_map):
            logger.warning(f"MAP objective decreased at iteration {it}: {previous_map:.6e} -> {current_map:.6e}")
        rows.append({"iteration": it, "q_value": q_value, "map_objective": current_map,
                     "min_eigenvalue": min_eigenvalue(state.R_n)})
        logger.debug(f"EM {prior.variant} iteration {it}: Q {q_value:.6e}, MAP {current_map:.6e}")
        previous_map = current_map

    extracted = wiener_extract(X, a, state)
    diagnostics = pd.DataFrame(rows, columns=["iteration", "q_value", "map_objective", "min_eigenvalue"])
    logger.info(f"RCSCME ({prior.variant}) finished {prior.n_iterations} iterations")
    return EmResult(final_state=state, extracted=extracted, diagnostics=diagnostics)
