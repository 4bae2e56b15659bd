"""SpecAugment frequency and time masking (masked cells set to zero)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .features import FeatureMatrix


@dataclass(frozen=True)
class SpecAugmentConfig:
    F: int = 27
    num_freq_masks: int = 2
    num_time_masks: int = 10
    p_S: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.F < 0 or self.num_freq_masks < 0 or self.num_time_masks < 0:
            raise ConfigError("mask sizes and counts must be non-negative")
        if not 0.0 <= self.p_S <= 1.0:
            raise ConfigError(f"p_S must lie in [0, 1], got {self.p_S}")


@dataclass(frozen=True)
class Mask:
    axis: str        # "freq" or "time"
    start: int
    width: int


def max_time_mask(T, p_S):
    return int(np.floor(p_S * T))


def draw_masks(num_frames, n_mels, cfg: SpecAugmentConfig, rng=None):
    """Draw every mask from the seeded stream: frequency masks first, then time masks."""
    if cfg.F >= n_mels and cfg.num_freq_masks:
        raise ConfigError(f"F={cfg.F} must be smaller than n_mels={n_mels}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    masks = []
    for _ in range(cfg.num_freq_masks):
        w = int(rng.integers(0, cfg.F + 1))
        masks.append(Mask("freq", int(rng.integers(0, n_mels - w + 1)), w))
    t_max = max_time_mask(num_frames, cfg.p_S)
    for _ in range(cfg.num_time_masks):
        w = int(rng.integers(0, t_max + 1))
        masks.append(Mask("time", int(rng.integers(0, num_frames - w + 1)), w))
    return masks


def apply_masks(data, masks):
    out = np.array(data, copy=True)
    for m in masks:
        if m.axis == "freq":
            out[:, m.start:m.start + m.width] = 0.0
        else:
            out[m.start:m.start + m.width, :] = 0.0
    return out


def spec_augment(features, cfg: SpecAugmentConfig = SpecAugmentConfig(), rng=None):
    """Return a masked copy of ``features`` (FeatureMatrix or T x mels array)."""
    is_fm = isinstance(features, FeatureMatrix)
    data = features.data if is_fm else np.asarray(features)
    masks = draw_masks(data.shape[0], data.shape[1], cfg, rng)
    out = apply_masks(data, masks)
    return FeatureMatrix(out, features.frame_rate) if is_fm else out
