"""
Synthetic scenes for desk-scale extraction experiments.

A directional speech-like target and a diffuse noise field made of independent
sources spread evenly around a circular microphone array. Every direction is
rendered through a short synthetic M-channel impulse response (fractional-delay
direct path plus a decaying random tail).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve, lfilter

from bse_errors import InputError

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
NOISE_KINDS = ("gaussian", "laplacian", "babble", "nonstationary")
GAIN_STEP_S = 0.25
GAIN_SPREAD_DB = 6.0


@dataclass(frozen=True)
class SceneConfig:
    n_mics: int = 3
    n_noise_directions: int = 19
    target_direction_deg: float = 0.0
    snr_db: float = 0.0
    seed: int = 0
    talker: int = 0
    duration_s: float = 4.0
    sample_rate_hz: int = 16000
    noise_kind: str = "gaussian"
    array_radius_m: float = 0.05
    ir_taps: int = 64
    target_tail_gain: float = 0.1
    noise_tail_gain: float = 0.5

    def __post_init__(self):
        if self.n_mics < 1 or self.n_noise_directions < 1:
            raise InputError("scene needs at least one microphone and one noise direction", stage="harness")
        if self.noise_kind not in NOISE_KINDS:
            raise InputError(f"unknown noise kind '{self.noise_kind}', expected one of {NOISE_KINDS}", stage="harness")
        if not 16 < self.ir_taps <= 64:
            raise InputError(f"impulse responses must have 17..64 taps, got {self.ir_taps}", stage="harness")
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise InputError("duration and sample rate must be positive", stage="harness")
        if self.talker < 0:
            raise InputError(f"talker index must be non-negative, got {self.talker}", stage="harness")

    @property
    def n_samples(self):
        return int(round(self.duration_s * self.sample_rate_hz))

    @property
    def is_diffuse(self):
        return self.n_noise_directions >= self.n_mics

    def noise_directions_deg(self):
        # Evenly spread, offset by half a step so none coincides with the target
        step = 360.0 / self.n_noise_directions
        return self.target_direction_deg + step * (np.arange(self.n_noise_directions) + 0.5)


@dataclass
class Mixture:
    mixture: np.ndarray  # (samples, M)
    target_image: np.ndarray
    noise_image: np.ndarray
    sample_rate_hz: int


def synth_speech(n_samples, sample_rate_hz, rng):
    """Voiced syllables with formant-shaped harmonics separated by pauses (super-Gaussian)."""
    fs = sample_rate_hz
    out = np.zeros(n_samples)
    pos = int(rng.uniform(0.0, 0.1) * fs)

    while pos < n_samples:
        seg = min(int(rng.uniform(0.12, 0.35) * fs), n_samples - pos)
        gap = int(rng.uniform(0.04, 0.25) * fs)
        if seg < 32:
            break

        t = np.arange(seg) / fs
        f0 = rng.uniform(90.0, 240.0) * (1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        n_harmonics = max(1, int(0.45 * fs / f0.max()))
        k = np.arange(1, n_harmonics + 1)

        formants = rng.uniform([300.0, 900.0, 2200.0], [900.0, 2200.0, 3400.0])
        freqs = k * f0.mean()
        gains = np.exp(-0.5 * ((freqs[:, None] - formants[None, :]) / 150.0) ** 2).sum(axis=1) + 0.05
        gains /= np.sqrt(k)

        voiced = np.sin(np.outer(phase, k) + rng.uniform(0, 2 * np.pi, n_harmonics)) @ gains
        voiced /= np.max(np.abs(voiced))
        out[pos : pos + seg] += rng.uniform(0.3, 1.0) * np.hanning(seg) * voiced
        pos += seg + gap

    std = np.std(out)
    return out / std if std > 0 else out


def synth_nonstationary_noise(n_samples, sample_rate_hz, rng):
    """Gaussian noise with a slowly wandering level and a drifting low/high spectral balance."""
    fs = sample_rate_hz
    t = np.arange(n_samples) / fs
    knots = np.arange(0.0, n_samples / fs + 2 * GAIN_STEP_S, GAIN_STEP_S)

    gain_db = rng.normal(0.0, GAIN_SPREAD_DB, knots.size)
    envelope = 10.0 ** (np.interp(t, knots, gain_db) / 20.0)

    white = rng.standard_normal(n_samples)
    lowpassed = lfilter([0.1], [1.0, -0.9], rng.standard_normal(n_samples))
    lowpassed /= max(np.std(lowpassed), np.finfo(np.float64).tiny)
    mix = np.interp(t, knots, rng.uniform(0.0, 1.0, knots.size))
    shaped = np.sqrt(mix) * white + np.sqrt(1.0 - mix) * lowpassed

    out = envelope * shaped
    std = np.std(out)
    return out / std if std > 0 else out


def synth_noise(kind, n_samples, sample_rate_hz, rng):
    if kind == "gaussian":
        return rng.standard_normal(n_samples)
    if kind == "laplacian":
        return rng.laplace(size=n_samples) / np.sqrt(2.0)
    if kind == "babble":
        return synth_speech(n_samples, sample_rate_hz, rng)
    if kind == "nonstationary":
        return synth_nonstationary_noise(n_samples, sample_rate_hz, rng)
    raise InputError(f"unknown noise kind '{kind}'", stage="harness")


def synth_impulse_response(direction_deg, cfg: SceneConfig, rng, tail_gain):
    """(taps, M) response: windowed-sinc fractional delay for a far-field plane wave plus a decaying random tail."""
    taps, n_mics = cfg.ir_taps, cfg.n_mics
    onset = taps // 8
    mic_angles = 2 * np.pi * np.arange(n_mics) / n_mics
    theta = np.deg2rad(direction_deg)
    delays = -cfg.array_radius_m * np.cos(theta - mic_angles) / SPEED_OF_SOUND * cfg.sample_rate_hz

    n = np.arange(taps)[:, None]
    offset = n - onset - delays[None, :]
    taper = np.where(np.abs(n - onset) <= onset, 0.5 * (1 + np.cos(np.pi * (n - onset) / (onset + 1))), 0.0)
    direct = np.sinc(offset) * taper

    decay = np.exp(-(n - onset) / (taps / 6.0)) * (n > onset)
    tail = tail_gain * rng.standard_normal((taps, n_mics)) * decay
    return direct + tail


def render(source, ir, n_samples):
    return fftconvolve(source[:, None], ir, axes=0)[:n_samples]


def _power(x):
    return float(np.mean(np.asarray(x) ** 2))


def make_mixture(cfg: SceneConfig, target: Optional[np.ndarray] = None,
                 noises: Optional[Sequence[np.ndarray]] = None) -> Mixture:
    """
    Render the target and every noise direction through synthetic responses and
    scale the noise image to the configured speech-to-noise ratio.

    A missing target is drawn from the talker stream, missing noises and the
    impulse responses from the scene seed. Fewer provided noises than
    directions are reused cyclically.
    """
    rng = np.random.default_rng(cfg.seed)
    if not cfg.is_diffuse:
        logger.warning(
            f"{cfg.n_noise_directions} noise directions for {cfg.n_mics} mics: noise field is not diffuse"
        )

    if target is None:
        target = synth_speech(cfg.n_samples, cfg.sample_rate_hz, np.random.default_rng((cfg.talker, 1)))
    target = np.asarray(target, dtype=np.float64).ravel()
    if target.size == 0:
        raise InputError("target signal is empty", stage="harness")
    n_samples = target.size

    if noises is None:
        noises = [synth_noise(cfg.noise_kind, n_samples, cfg.sample_rate_hz, rng)
                  for _ in range(cfg.n_noise_directions)]
    if len(noises) == 0:
        raise InputError("at least one noise source is required", stage="harness")

    target_ir = synth_impulse_response(cfg.target_direction_deg, cfg, rng, cfg.target_tail_gain)
    target_image = render(target, target_ir, n_samples)

    noise_image = np.zeros_like(target_image)
    for d, direction in enumerate(cfg.noise_directions_deg()):
        source = np.resize(np.asarray(noises[d % len(noises)], dtype=np.float64).ravel(), n_samples)
        ir = synth_impulse_response(direction, cfg, rng, cfg.noise_tail_gain)
        noise_image += render(source, ir, n_samples)

    target_power, noise_power = _power(target_image), _power(noise_image)
    if target_power <= 0.0 or noise_power <= 0.0:
        raise InputError("target and noise images must have non-zero power", stage="harness")
    noise_image *= np.sqrt(target_power / (noise_power * 10.0 ** (cfg.snr_db / 10.0)))

    logger.info(
        f"Scene seed {cfg.seed}, talker {cfg.talker}: {cfg.n_mics} mics, target at {cfg.target_direction_deg:.0f} deg, "
        f"{cfg.n_noise_directions} {cfg.noise_kind} noise directions, SNR {cfg.snr_db:.1f} dB"
    )
    return Mixture(
        mixture=target_image + noise_image,
        target_image=target_image,
        noise_image=noise_image,
        sample_rate_hz=cfg.sample_rate_hz,
    )
