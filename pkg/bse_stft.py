"""Multichannel STFT analysis and weighted overlap-add synthesis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import get_window

from bse_errors import ConfigError, InputError

logger = logging.getLogger(__name__)

SUPPORTED_WINDOWS = ("hamming",)
DEFAULT_SAMPLE_RATE_HZ = 16000


@dataclass(frozen=True)
class FrameConfig:
    window_length_samples: int = 1024
    hop_samples: int = 512
    window_kind: str = "hamming"
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        if self.hop_samples <= 0:
            raise ConfigError(f"hop must be positive, got {self.hop_samples}", stage="stft")
        if self.window_length_samples <= 0 or self.sample_rate_hz <= 0:
            raise ConfigError("window length and sample rate must be positive", stage="stft")
        if self.window_length_samples != 2 * self.hop_samples:
            raise ConfigError(
                f"window {self.window_length_samples} must be twice the hop {self.hop_samples}",
                stage="stft",
            )
        if self.window_kind not in SUPPORTED_WINDOWS:
            raise ConfigError(f"unsupported window kind '{self.window_kind}'", stage="stft")

    @classmethod
    def from_milliseconds(cls, sample_rate_hz, window_ms=64.0, window_kind="hamming"):
        """Window of window_ms rounded to an even sample count, hop of half of it."""
        half = int(round(sample_rate_hz * window_ms / 2000.0))
        return cls(
            window_length_samples=2 * half,
            hop_samples=half,
            window_kind=window_kind,
            sample_rate_hz=int(sample_rate_hz),
        )

    @property
    def n_bins(self):
        return self.window_length_samples // 2 + 1

    def window(self):
        # fftbins=True gives the periodic window
        return get_window(self.window_kind, self.window_length_samples, fftbins=True)


@dataclass
class SpectrogramTensor:
    """Complex STFT indexed (frequency bin, frame, channel)."""

    data: np.ndarray
    frame_config: FrameConfig
    n_samples: Optional[int] = None

    @property
    def n_bins(self):
        return self.data.shape[0]

    @property
    def n_frames(self):
        return self.data.shape[1]

    @property
    def n_channels(self):
        return self.data.shape[2]

    def with_data(self, data):
        return replace(self, data=data)


def _frame_indices(n_frames, cfg):
    return np.arange(cfg.window_length_samples)[None, :] + cfg.hop_samples * np.arange(n_frames)[:, None]


def analyze(signal, cfg: FrameConfig) -> SpectrogramTensor:
    """One-sided STFT of every channel of `signal` (samples x channels)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[:, None]
    if signal.ndim != 2 or signal.size == 0:
        raise InputError("signal must be a non-empty (samples, channels) array", stage="stft")

    n_samples, n_channels = signal.shape
    win_len, hop = cfg.window_length_samples, cfg.hop_samples
    if n_samples < win_len:
        raise InputError(
            f"signal of {n_samples} samples is shorter than one window ({win_len})", stage="stft"
        )

    # Final partial frame is zero-padded
    n_frames = 1 + int(np.ceil((n_samples - win_len) / hop))
    padded = np.zeros(((n_frames - 1) * hop + win_len, n_channels))
    padded[:n_samples] = signal

    frames = padded[_frame_indices(n_frames, cfg)]  # (J, N, M)
    spectra = np.fft.rfft(frames * cfg.window()[None, :, None], axis=1)
    data = np.ascontiguousarray(spectra.transpose(1, 0, 2))

    logger.debug(f"STFT: {n_samples} samples x {n_channels} ch -> {data.shape}")
    return SpectrogramTensor(data=data, frame_config=cfg, n_samples=n_samples)


def synthesize(spec: SpectrogramTensor) -> np.ndarray:
    """Weighted overlap-add inverse of `analyze`, returns (samples, channels)."""
    cfg = spec.frame_config
    data = np.asarray(spec.data)
    if data.ndim != 3 or data.shape[0] != cfg.n_bins:
        raise InputError(
            f"spectrogram shape {data.shape} does not match {cfg.n_bins} bins", stage="stft"
        )

    n_bins, n_frames, n_channels = data.shape
    win_len, hop = cfg.window_length_samples, cfg.hop_samples
    window = cfg.window()
    total = (n_frames - 1) * hop + win_len if n_frames > 0 else 0

    frames = np.fft.irfft(data.transpose(1, 0, 2), n=win_len, axis=1)
    frames *= window[None, :, None]

    idx = _frame_indices(n_frames, cfg)
    out = np.zeros((total, n_channels))
    norm = np.zeros(total)
    np.add.at(out, idx, frames)
    np.add.at(norm, idx, np.broadcast_to(window ** 2, idx.shape))

    covered = norm > np.finfo(np.float64).eps
    out[covered] /= norm[covered, None]

    if spec.n_samples is not None:
        out = out[: spec.n_samples]
    return out


def select_channels(spec: SpectrogramTensor, channels: Sequence[int]) -> SpectrogramTensor:
    return spec.with_data(spec.data[:, :, list(channels)])
