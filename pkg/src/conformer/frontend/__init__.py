"""Audio ingestion, log-mel features and SpecAugment."""

from .audio import AudioBuffer, parse_wav, read_wav, write_wav
from .augment import Mask, SpecAugmentConfig, apply_masks, draw_masks, max_time_mask, spec_augment
from .features import (FeatureConfig, FeatureMatrix, hz_to_mel, log_mel, mel_filterbank,
                       mel_points, mel_to_hz, num_frames)

__all__ = [
    "AudioBuffer", "FeatureConfig", "FeatureMatrix", "Mask", "SpecAugmentConfig", "apply_masks",
    "draw_masks", "hz_to_mel", "log_mel", "max_time_mask", "mel_filterbank", "mel_points",
    "mel_to_hz", "num_frames", "parse_wav", "read_wav", "spec_augment", "write_wav",
]
