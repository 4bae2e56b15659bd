"""Conformer block assembly and the full Conformer encoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .. import tensor as tt
from ..errors import ConfigError
from ..modules import (ConvModuleParams, FeedForwardParams, LayerNormParams, LinearParams,
                       MHSAParams, SubsampleParams, conv_module, conv_subsample, feed_forward,
                       mhsa_relpos)
from ..params import list_field
from .config import ConformerConfig


@dataclass
class BlockParams:
    ffn1: Optional[FeedForwardParams]
    mhsa: MHSAParams
    conv: Optional[ConvModuleParams]
    merge: Optional[LinearParams]
    ffn2: FeedForwardParams
    ln: LayerNormParams

    @classmethod
    def build(cls, cfg: ConformerConfig, make):
        d, ab = cfg.d_model, cfg.ablation
        macaron = ab.ffn_style == "macaron_half"
        has_conv = ab.conv_module == "on"
        return cls(
            ffn1=FeedForwardParams.build(d, make) if macaron else None,
            mhsa=MHSAParams.build(d, make, relative=ab.pos_emb == "relative"),
            conv=(ConvModuleParams.build(d, cfg.conv_kernel, make, ab.conv_kind == "lightweight")
                  if has_conv else None),
            merge=(LinearParams.build(2 * d, d, make)
                   if has_conv and ab.conv_position == "parallel_concat" else None),
            ffn2=FeedForwardParams.build(d, make),
            ln=LayerNormParams.build(d, make),
        )


@dataclass
class ConformerParams:
    """Parameter tree of a Conformer encoder; ``config`` is carried along, not a leaf."""

    config: ConformerConfig
    subsample: SubsampleParams
    blocks: list = list_field("block")

    @classmethod
    def build(cls, cfg: ConformerConfig, make):
        sub = SubsampleParams.build(cfg.d_model, cfg.n_mels, make)
        return cls(cfg, sub, [BlockParams.build(cfg, make) for _ in range(cfg.num_layers)])


def _check(p: BlockParams, cfg: ConformerConfig):
    ab = cfg.ablation
    if (p.ffn1 is not None) != (ab.ffn_style == "macaron_half"):
        raise ConfigError("block params do not match the configured FFN style")
    if (p.conv is not None) != (ab.conv_module == "on"):
        raise ConfigError("block params do not match the configured conv module setting")
    if (p.mhsa.Wr is not None) != (ab.pos_emb == "relative"):
        raise ConfigError("block params do not match the configured positional embedding")
    if p.ln.gamma.shape[0] != cfg.d_model:
        raise ConfigError(f"block width {p.ln.gamma.shape[0]} != d_model {cfg.d_model}")


def conformer_block(x, p: BlockParams, cfg: ConformerConfig, mode="infer", rng=None):
    """One Conformer block.

    Default wiring::

        x1 = x + 1/2 FFN(x)
        x2 = x1 + MHSA(x1)
        x3 = x2 + Conv(x2)
        y  = LayerNorm(x3 + 1/2 FFN(x3))

    ``cfg.ablation`` swaps activation, drops the conv module, uses a single
    full-residual FFN after the attention/conv pair, reorders or parallelises
    the middle stages, or uses full-step FFN residuals.
    """
    _check(p, cfg)
    ab = cfg.ablation
    kw = dict(mode=mode, rng=rng, dropout=cfg.dropout)
    act = ab.activation
    half = 0.5 if ab.residual == "half" else 1.0

    def mhsa(h):
        return mhsa_relpos(h, p.mhsa, cfg.num_heads, variant=ab.pos_emb, **kw)

    def conv(h):
        return conv_module(h, p.conv, variant=ab.conv_kind, activation=act, **kw)

    if p.ffn1 is not None:
        x = x + half * feed_forward(x, p.ffn1, activation=act, **kw)

    if p.conv is None:
        x = x + mhsa(x)
    elif ab.conv_position == "after_mhsa":
        x = x + mhsa(x)
        x = x + conv(x)
    elif ab.conv_position == "before_mhsa":
        x = x + conv(x)
        x = x + mhsa(x)
    else:
        both = tt.concat([mhsa(x), conv(x)], axis=-1)
        x = x + tt.linear(both, p.merge.W, p.merge.b)

    scale = half if p.ffn1 is not None else 1.0
    x = x + scale * feed_forward(x, p.ffn2, activation=act, **kw)
    return tt.layer_norm(x, p.ln.gamma, p.ln.beta)


def conformer_encode(features, model: ConformerParams, mode="infer", rng=None):
    """Subsample the (T x n_mels) features, then run every block in order."""
    cfg = model.config
    x = conv_subsample(features, model.subsample, mode=mode, rng=rng, dropout=cfg.dropout)
    for block in model.blocks:
        x = conformer_block(x, block, cfg, mode=mode, rng=rng)
    return x
