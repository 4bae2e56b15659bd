"""Log-mel filterbank features: Hann window, power spectrum, HTK mel triangles, log floor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError
from .audio import AudioBuffer


@dataclass(frozen=True)
class FeatureConfig:
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if not self.window_ms > self.hop_ms > 0:
            raise ConfigError(f"need window_ms > hop_ms > 0, got {self.window_ms}/{self.hop_ms}")
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    def window_samples(self, sample_rate):
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate):
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def fft_size(self, sample_rate):
        n = self.window_samples(sample_rate)
        return 1 << (n - 1).bit_length()


@dataclass
class FeatureMatrix:
    """(frames x mels) log-mel features with frame-rate metadata."""

    data: np.ndarray
    frame_rate: float = 100.0

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_frames(self):
        return self.data.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_points(n_mels, fmin, fmax):
    """n_mels + 2 edge frequencies (Hz), equally spaced on the mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_mels, n_fft, sample_rate, fmin=0.0, fmax=None):
    """(n_fft//2 + 1) x n_mels triangular weights evaluated at FFT bin frequencies."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_points(n_mels, fmin, fmax)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, center, hi = edges[:-2], edges[1:-1], edges[2:]
    rising = (freqs[:, None] - lo) / (center - lo)
    falling = (hi - freqs[:, None]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def num_frames(n_samples, window, hop):
    return 1 + (n_samples - window) // hop


def log_mel(audio: AudioBuffer, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    sr = audio.sample_rate
    win, hop, n_fft = cfg.window_samples(sr), cfg.hop_samples(sr), cfg.fft_size(sr)
    x = audio.samples
    if len(x) < win:
        raise DimensionError(f"audio has {len(x)} samples, shorter than one {win}-sample window")
    T = num_frames(len(x), win, hop)
    idx = np.arange(win)[None, :] + hop * np.arange(T)[:, None]
    frames = x[idx] * np.hanning(win)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg.n_mels, n_fft, sr, cfg.fmin, cfg.fmax)
    return FeatureMatrix(np.log(np.maximum(energies, cfg.log_floor)), frame_rate=sr / hop)
