"""Model configurations, presets and the ablation row vocabulary."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

from ..errors import ConfigError

HEAD_SWEEP = (4, 8, 16, 32)
KERNEL_SWEEP = (3, 7, 17, 32, 65)

_CHOICES = {
    "activation": ("swish", "relu"),
    "conv_module": ("on", "off"),
    "ffn_style": ("macaron_half", "single"),
    "pos_emb": ("relative", "absolute"),
    "conv_kind": ("depthwise", "lightweight"),
    "conv_position": ("after_mhsa", "before_mhsa", "parallel_concat"),
    "residual": ("half", "full"),
}


@dataclass(frozen=True)
class AblationSpec:
    """Block variant; the defaults are the full Conformer block."""

    activation: str = "swish"
    conv_module: str = "on"
    ffn_style: str = "macaron_half"
    pos_emb: str = "relative"
    conv_kind: str = "depthwise"
    conv_position: str = "after_mhsa"
    residual: str = "half"

    def __post_init__(self):
        for name, allowed in _CHOICES.items():
            value = getattr(self, name)
            if value not in allowed:
                raise ConfigError(f"ablation field {name}={value!r} not in {allowed}")


@dataclass(frozen=True)
class ConformerConfig:
    num_layers: int
    d_model: int
    num_heads: int
    conv_kernel: int = 32
    ffn_expansion: int = 4
    dropout: float = 0.1
    ablation: AblationSpec = field(default_factory=AblationSpec)
    subsample_factor: int = 4
    n_mels: int = 80
    decoder_dim: int = 640

    def __post_init__(self):
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.d_model < 2 or self.d_model % 2:
            raise ConfigError(f"d_model must be a positive even number, got {self.d_model}")
        if self.num_heads < 1 or self.d_model % self.num_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if self.conv_kernel < 1:
            raise ConfigError(f"conv_kernel must be >= 1, got {self.conv_kernel}")
        if self.ffn_expansion != 4:
            raise ConfigError("the feed-forward expansion factor is fixed at 4")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.subsample_factor != 4:
            raise ConfigError("only 4x convolutional subsampling is implemented")
        if self.ablation.conv_kind == "lightweight" and self.d_model % 4:
            raise ConfigError("lightweight conv needs d_model divisible by 4")

    @property
    def d_head(self):
        return self.d_model // self.num_heads


PRESETS = {
    "S": ConformerConfig(num_layers=16, d_model=144, num_heads=4, conv_kernel=32, decoder_dim=320),
    "M": ConformerConfig(num_layers=16, d_model=256, num_heads=4, conv_kernel=32, decoder_dim=640),
    "L": ConformerConfig(num_layers=17, d_model=512, num_heads=8, conv_kernel=32, decoder_dim=640),
}

# Reported total parameter counts in millions.
PRESET_TARGETS_M = {"S": 10.3, "M": 30.7, "L": 118.8}


def get_preset(name):
    try:
        return PRESETS[name.upper()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


_ROW_FIELDS = {
    "relu": {"activation": "relu"},
    "no_conv": {"conv_module": "off"},
    "single_ffn": {"ffn_style": "single"},
    "abs_pos": {"pos_emb": "absolute"},
    "lightweight": {"conv_kind": "lightweight"},
    "conv_first": {"conv_position": "before_mhsa"},
    "parallel": {"conv_position": "parallel_concat"},
    "full_residual": {"residual": "full"},
}

ABLATION_ROWS = tuple(_ROW_FIELDS) + ("heads(n)", "kernel(k)")

_PARAM_ROW = re.compile(r"^(heads|kernel)\((\d+)\)$")


def apply_ablation(cfg: ConformerConfig, row: str) -> ConformerConfig:
    """Return ``cfg`` rewired for one named ablation row."""
    row = row.strip()
    if row in _ROW_FIELDS:
        spec = dataclasses.replace(cfg.ablation, **_ROW_FIELDS[row])
        return dataclasses.replace(cfg, ablation=spec)
    m = _PARAM_ROW.match(row)
    if m is None:
        raise ConfigError(f"unknown ablation row {row!r}; expected one of {', '.join(ABLATION_ROWS)}")
    value = int(m.group(2))
    if m.group(1) == "heads":
        return dataclasses.replace(cfg, num_heads=value)
    return dataclasses.replace(cfg, conv_kernel=value)


def apply_ablations(cfg, rows):
    for row in rows:
        cfg = apply_ablation(cfg, row)
    return cfg


# -- ContextNet -------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSpec:
    num_layers: int
    channels: int
    filter_size: int = 5
    stride: int = 1
    se: bool = True
    residual: bool = True
    dilation: int = 1
    scaled: bool = True


def default_contextnet_blocks():
    """C0 (1 layer, no residual), C1-C10 (256), C11-C29 (512), C30 (640, dilation 2).

    Stride 2 sits on C4, C7 and C11 for a total 8x reduction.
    """
    blocks = [BlockSpec(1, 256, residual=False)]
    for i in range(1, 11):
        blocks.append(BlockSpec(5, 256, stride=2 if i in (4, 7) else 1))
    for i in range(11, 30):
        blocks.append(BlockSpec(5, 512, stride=2 if i == 11 else 1))
    blocks.append(BlockSpec(1, 640, dilation=2, scaled=False))
    return tuple(blocks)


@dataclass(frozen=True)
class ContextNetConfig:
    alpha: float = 1.0
    blocks: tuple = field(default_factory=default_contextnet_blocks)
    n_mels: int = 80
    activation: str = "swish"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        strides = [b.stride for b in self.blocks]
        if sorted(set(strides)) not in ([1, 2], [2]) or strides.count(2) != 3:
            raise ConfigError("ContextNet needs exactly three stride-2 blocks, all others stride 1")
        for b in self.blocks:
            if b.filter_size != 5:
                raise ConfigError("ContextNet filter size is fixed at 5")
            if b.num_layers < 1:
                raise ConfigError("every ContextNet block needs at least one conv layer")
        if min(self.channels) < 1:
            raise ConfigError(f"alpha={self.alpha} scales some block to zero channels")

    @property
    def channels(self):
        return [round(self.alpha * b.channels) if b.scaled else b.channels for b in self.blocks]
