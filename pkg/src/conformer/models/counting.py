"""Model construction, analytic parameter counting and the learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError
from ..params import Allocator, ShapeRecorder, count_leaves
from .config import ConformerConfig, ContextNetConfig
from .conformer import BlockParams, ConformerParams
from .contextnet import ContextNetParams

WPM_VOCAB = 1000
JOINT_DIM = 640


@dataclass(frozen=True)
class ParamCount:
    encoder: int
    decoder_analytic: int

    @property
    def total(self):
        return self.encoder + self.decoder_analytic


def _root(cfg):
    if isinstance(cfg, ConformerConfig):
        return ConformerParams
    if isinstance(cfg, ContextNetConfig):
        return ContextNetParams
    raise ConfigError(f"cannot build a model from {type(cfg).__name__}")


def build_model(cfg, seed=0, dtype=None):
    """Allocate a parameter tree for ``cfg`` with weights drawn from ``seed``."""
    return _root(cfg).build(cfg, Allocator(seed, dtype))


def param_schema(cfg):
    """Shape-only tree (no allocation) with the same leaf names as :func:`build_model`."""
    return _root(cfg).build(cfg, ShapeRecorder())


def decoder_param_count(decoder_dim, d_model, vocab=WPM_VOCAB, joint=JOINT_DIM):
    """Embedding + one-layer LSTM + joint network, by formula only.

    embed V*e + LSTM 4((e+h)h + h) + joint (d+h)j + jV with e = h = decoder_dim.
    """
    e = h = decoder_dim
    return vocab * e + 4 * ((e + h) * h + h) + (d_model + h) * joint + joint * vocab


def per_block_count(cfg: ConformerConfig):
    return count_leaves(BlockParams.build(cfg, ShapeRecorder()))


def count_params(cfg) -> ParamCount:
    encoder = count_leaves(param_schema(cfg))
    if isinstance(cfg, ConformerConfig):
        return ParamCount(encoder, decoder_param_count(cfg.decoder_dim, cfg.d_model))
    return ParamCount(encoder, 0)


def lr_schedule(step, d_model, warmup=10000, peak_scale=0.05):
    """Transformer schedule: (0.05 / sqrt(d)) * min(step / warmup, sqrt(warmup / step))."""
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    peak = peak_scale / math.sqrt(d_model)
    return peak * min(step / warmup, math.sqrt(warmup / step))
