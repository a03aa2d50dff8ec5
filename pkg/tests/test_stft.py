import numpy as np
import pytest

from bse_errors import ConfigError, InputError
from bse_stft import FrameConfig, SpectrogramTensor, analyze, select_channels, synthesize


class TestFrameConfig:
    def test_default_operating_point(self):
        cfg = FrameConfig.from_milliseconds(16000)
        assert cfg.window_length_samples == 1024
        assert cfg.hop_samples == 512
        assert cfg.n_bins == 513

    def test_other_rate_keeps_half_overlap(self):
        cfg = FrameConfig.from_milliseconds(8000)
        assert (cfg.window_length_samples, cfg.hop_samples) == (512, 256)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"window_length_samples": 1024, "hop_samples": 0},
            {"window_length_samples": 1024, "hop_samples": 256},
            {"window_length_samples": 1024, "hop_samples": 512, "window_kind": "hann"},
        ],
    )
    def test_invalid_layout_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            FrameConfig(**kwargs)


class TestAnalyze:
    cfg = FrameConfig(window_length_samples=64, hop_samples=32)

    def test_frame_count_with_zero_padding(self):
        X = analyze(np.zeros((1000, 2)), FrameConfig(256, 128))
        assert X.data.shape == (129, 7, 2)

    def test_zero_signal(self):
        X = analyze(np.zeros((640, 3)), self.cfg)
        assert not np.any(X.data)

    def test_impulse_is_flat_window_sample(self):
        signal = np.zeros(640)
        signal[0] = 1.0
        X = analyze(signal, self.cfg)
        np.testing.assert_allclose(np.abs(X.data[:, 0, 0]), self.cfg.window()[0], atol=1e-12)

    def test_sinusoid_hamming_leakage(self):
        k, n = 8, self.cfg.window_length_samples
        t = np.arange(20 * n)
        X = analyze(np.cos(2 * np.pi * k * t / n), self.cfg)
        mag = np.abs(X.data[:, 5, 0])
        np.testing.assert_allclose(mag[k], 0.54 * n / 2, rtol=1e-9)
        np.testing.assert_allclose(mag[[k - 1, k + 1]], 0.23 * n / 2, rtol=1e-9)
        assert np.max(np.delete(mag, [k - 1, k, k + 1])) < 1e-9 * mag[k]

    def test_parseval_per_frame(self, rng):
        signal = rng.standard_normal((640, 3))
        X = analyze(signal, self.cfg)
        n = self.cfg.window_length_samples
        frame = signal[3 * 32 : 3 * 32 + n] * self.cfg.window()[:, None]
        spec = np.abs(X.data[:, 3, :]) ** 2
        energy = (spec[0] + 2 * spec[1:-1].sum(axis=0) + spec[-1]) / n
        np.testing.assert_allclose(energy, np.sum(frame ** 2, axis=0), rtol=1e-9)

    def test_rejects_empty_and_short(self):
        with pytest.raises(InputError):
            analyze(np.zeros((0, 2)), self.cfg)
        with pytest.raises(InputError):
            analyze(np.zeros((10, 2)), self.cfg)

    def test_linearity(self, rng):
        x, y = rng.standard_normal((640, 2)), rng.standard_normal((640, 2))
        combined = analyze(2.5 * x - 0.7 * y, self.cfg).data
        np.testing.assert_allclose(combined, 2.5 * analyze(x, self.cfg).data - 0.7 * analyze(y, self.cfg).data,
                                   atol=1e-12 * np.abs(combined).max())


class TestSynthesize:
    def test_roundtrip_white_noise(self, rng):
        cfg = FrameConfig.from_milliseconds(16000)
        signal = rng.standard_normal((16000, 3))
        out = synthesize(analyze(signal, cfg))
        assert out.shape == signal.shape
        interior = slice(cfg.window_length_samples, -cfg.window_length_samples)
        err = np.max(np.abs(out[interior] - signal[interior])) / np.max(np.abs(signal))
        assert err < 1e-6

    def test_zero_spectrogram(self):
        cfg = FrameConfig(64, 32)
        out = synthesize(SpectrogramTensor(np.zeros((33, 5, 2), dtype=complex), cfg))
        assert out.shape == (64 + 4 * 32, 2)
        assert not np.any(out)

    def test_single_frame_compensation(self, rng):
        cfg = FrameConfig(64, 32)
        data = np.fft.rfft(rng.standard_normal(64))[:, None, None]
        out = synthesize(SpectrogramTensor(data, cfg))
        np.testing.assert_allclose(out[:, 0], np.fft.irfft(data[:, 0, 0], n=64) / cfg.window(), rtol=1e-12)

    def test_inconsistent_bins(self):
        with pytest.raises(InputError):
            synthesize(SpectrogramTensor(np.zeros((10, 2, 1), dtype=complex), FrameConfig(64, 32)))


def test_select_channels(rng):
    X = analyze(rng.standard_normal((640, 3)), FrameConfig(64, 32))
    sub = select_channels(X, [2, 0])
    np.testing.assert_array_equal(sub.data[..., 0], X.data[..., 2])
    assert sub.n_channels == 2
