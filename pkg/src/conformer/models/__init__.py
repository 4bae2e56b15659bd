"""Encoder assembly: Conformer blocks, the ContextNet encoder, counting and schedules."""

from .config import (ABLATION_ROWS, HEAD_SWEEP, KERNEL_SWEEP, PRESET_TARGETS_M, PRESETS,
                     AblationSpec, BlockSpec, ContextNetConfig, ConformerConfig, apply_ablation,
                     apply_ablations, default_contextnet_blocks, get_preset)
from .conformer import BlockParams, ConformerParams, conformer_block, conformer_encode
from .contextnet import (ContextNetBlockParams, ContextNetParams, contextnet_block,
                         contextnet_encode, contextnet_reduced_length)
from .counting import (ParamCount, build_model, count_params, decoder_param_count, lr_schedule,
                       param_schema, per_block_count)

__all__ = [
    "ABLATION_ROWS", "HEAD_SWEEP", "KERNEL_SWEEP", "PRESETS", "PRESET_TARGETS_M", "AblationSpec",
    "BlockParams", "BlockSpec", "ConformerConfig", "ConformerParams", "ContextNetBlockParams",
    "ContextNetConfig", "ContextNetParams", "ParamCount", "apply_ablation", "apply_ablations",
    "build_model", "conformer_block", "conformer_encode", "contextnet_block", "contextnet_encode",
    "contextnet_reduced_length", "count_params", "decoder_param_count",
    "default_contextnet_blocks", "get_preset", "lr_schedule", "param_schema", "per_block_count",
]
