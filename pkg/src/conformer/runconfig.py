"""YAML run-configuration files.

Schema (every key optional; unknown keys are errors)::

    model: conformer            # or contextnet
    preset: S                   # S | M | L, conformer only; S when no conformer section
    conformer:                  # explicit fields, override the preset
      num_layers: 2
      d_model: 144
      num_heads: 4
      conv_kernel: 32
      dropout: 0.1
      n_mels: 80
      decoder_dim: 320
    ablations: [relu, kernel(7)]
    contextnet:
      alpha: 0.5
      n_mels: 80
      activation: swish
    features:
      n_mels: 80
      window_ms: 25
      hop_ms: 10
      fmin: 0
      fmax: 8000
      log_floor: 1.0e-10
    spec_augment:               # applied to features in train mode only
      F: 27
      num_freq_masks: 2
      num_time_masks: 10
      p_S: 0.05
    precision: float64          # or float32
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .errors import ConfigError
from .frontend import FeatureConfig, SpecAugmentConfig
from .models import (ConformerConfig, ContextNetConfig, apply_ablations, get_preset)

_TOP_KEYS = {"model", "preset", "conformer", "ablations", "contextnet", "features",
             "spec_augment", "precision"}
_CONFORMER_KEYS = {"num_layers", "d_model", "num_heads", "conv_kernel", "dropout", "n_mels",
                   "decoder_dim"}
_CONTEXTNET_KEYS = {"alpha", "n_mels", "activation"}
_FEATURE_KEYS = {f.name for f in dataclasses.fields(FeatureConfig)}
_SPECAUG_KEYS = {f.name for f in dataclasses.fields(SpecAugmentConfig)} - {"seed"}


@dataclass
class RunConfig:
    model: object = field(default_factory=lambda: get_preset("S"))
    features: FeatureConfig = field(default_factory=FeatureConfig)
    spec_augment: Optional[SpecAugmentConfig] = None
    precision: str = "float64"
    source: dict = field(default_factory=dict)

    @property
    def kind(self):
        return "contextnet" if isinstance(self.model, ContextNetConfig) else "conformer"


def _check_keys(section, allowed, prefix=""):
    if not isinstance(section, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{prefix}{key}'")


def _build(cls, kwargs, prefix, base=None):
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in '{prefix}': {exc}") from None


def parse_run_config(raw) -> RunConfig:
    raw = raw or {}
    _check_keys(raw, _TOP_KEYS)
    kind = raw.get("model", "conformer")
    if kind not in ("conformer", "contextnet"):
        raise ConfigError(f"config key 'model' must be conformer or contextnet, got {kind!r}")

    if kind == "conformer":
        if "contextnet" in raw:
            raise ConfigError("config key 'contextnet' given for a conformer model")
        overrides = raw.get("conformer", {}) or {}
        _check_keys(overrides, _CONFORMER_KEYS, "conformer.")
        base = get_preset(str(raw.get("preset", "S"))) if "preset" in raw or not overrides else None
        if base is None:
            missing = {"num_layers", "d_model", "num_heads"} - set(overrides)
            if missing:
                raise ConfigError(f"conformer config without a preset needs {sorted(missing)}")
        model = _build(ConformerConfig, overrides, "conformer", base)
        rows = raw.get("ablations", []) or []
        if not isinstance(rows, list):
            raise ConfigError("config key 'ablations' must be a list of row names")
        model = apply_ablations(model, [str(r) for r in rows])
    else:
        for key in ("preset", "conformer", "ablations"):
            if key in raw:
                raise ConfigError(f"config key '{key}' given for a contextnet model")
        section = raw.get("contextnet", {}) or {}
        _check_keys(section, _CONTEXTNET_KEYS, "contextnet.")
        model = _build(ContextNetConfig, section, "contextnet")

    feats = raw.get("features", {}) or {}
    _check_keys(feats, _FEATURE_KEYS, "features.")
    features = _build(FeatureConfig, feats, "features")
    if features.n_mels != model.n_mels:
        raise ConfigError(f"features.n_mels={features.n_mels} does not match the model's n_mels={model.n_mels}")

    aug = None
    if "spec_augment" in raw:
        section = raw["spec_augment"] or {}
        _check_keys(section, _SPECAUG_KEYS, "spec_augment.")
        aug = _build(SpecAugmentConfig, section, "spec_augment")

    precision = raw.get("precision", "float64")
    if precision not in ("float64", "float32"):
        raise ConfigError(f"config key 'precision' must be float64 or float32, got {precision!r}")
    return RunConfig(model, features, aug, precision, dict(raw))


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return parse_run_config(raw)
