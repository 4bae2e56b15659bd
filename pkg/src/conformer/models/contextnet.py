"""ContextNet-style convolutional encoder with squeeze-and-excitation.

Each block computes ``SE(f^(m-1)(f'(x))) + proj(x)`` with
``f = Act(BN(Conv5(.)))``.  The first layer ``f'`` carries any channel change
and the block stride; ``proj`` is a strided pointwise conv when the residual
shapes differ and the identity otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .. import tensor as tt
from ..errors import DimensionError
from ..modules import BatchNormParams, LinearParams, SEParams, se_block
from ..params import list_field
from .config import BlockSpec, ContextNetConfig


@dataclass
class ConvBNParams:
    kernel: tt.Tensor
    bn: BatchNormParams

    @classmethod
    def build(cls, k, c_in, c_out, make):
        return cls(make((k, c_in, c_out), "xavier", (k * c_in, k * c_out)),
                   BatchNormParams.build(c_out, make))


@dataclass
class ContextNetBlockParams:
    convs: list = list_field("conv")
    se: Optional[SEParams] = None
    residual: Optional[LinearParams] = None

    @classmethod
    def build(cls, spec: BlockSpec, c_in, c_out, make):
        convs = [ConvBNParams.build(spec.filter_size, c_in if i == 0 else c_out, c_out, make)
                 for i in range(spec.num_layers)]
        se = SEParams.build(c_out, make) if spec.se else None
        needs_proj = spec.residual and (c_in != c_out or spec.stride != 1)
        return cls(convs, se, LinearParams.build(c_in, c_out, make) if needs_proj else None)


@dataclass
class ContextNetParams:
    config: ContextNetConfig
    blocks: list = list_field("block")

    @classmethod
    def build(cls, cfg: ContextNetConfig, make):
        blocks, c_in = [], cfg.n_mels
        for spec, c_out in zip(cfg.blocks, cfg.channels):
            blocks.append(ContextNetBlockParams.build(spec, c_in, c_out, make))
            c_in = c_out
        return cls(cfg, blocks)


def conv_output_length(T, stride=1):
    """SAME-padded length: ceil(T / stride)."""
    return (T - 1) // stride + 1


def _conv_bn_act(x, p: ConvBNParams, stride, dilation, mode, activation):
    k = p.kernel.shape[0]
    span = dilation * (k - 1)
    pad = (span // 2, span - span // 2)
    h = tt.conv1d(x, p.kernel, None, "full", pad, stride=stride, dilation=dilation)
    h = tt.batch_norm(h, p.bn.gamma, p.bn.beta, p.bn.running_mean, p.bn.running_var, mode)
    return tt.activation(h, activation)


def contextnet_block(x, p: ContextNetBlockParams, spec: BlockSpec, mode="infer",
                     activation="swish"):
    """One ContextNet block mapping (T x C) to (ceil(T/stride) x C')."""
    if x.shape[1] != p.convs[0].kernel.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels, block expects {p.convs[0].kernel.shape[1]}")
    h = x
    for i, layer in enumerate(p.convs):
        h = _conv_bn_act(h, layer, spec.stride if i == 0 else 1, spec.dilation, mode, activation)
    if p.se is not None:
        h = se_block(h, p.se, activation=activation)
    if not spec.residual:
        return h
    if p.residual is None:
        return h + x
    strided = x[::spec.stride] if spec.stride != 1 else x
    return h + tt.linear(strided, p.residual.W, p.residual.b)


def contextnet_reduced_length(T, cfg: ContextNetConfig):
    """Stage-wise frame count after every stride: T -> ceil(T/2) three times."""
    for spec in cfg.blocks:
        T = conv_output_length(T, spec.stride)
    return T


def contextnet_encode(features, model: ContextNetParams, mode="infer"):
    cfg = model.config
    f = features.data if hasattr(features, "frame_rate") else features
    x = tt.as_tensor(f)
    if x.shape[0] < 8:
        raise DimensionError(f"ContextNet needs at least 8 frames for three stride-2 stages, got {x.shape[0]}")
    for spec, block in zip(cfg.blocks, model.blocks):
        x = contextnet_block(x, block, spec, mode=mode, activation=cfg.activation)
    return x
