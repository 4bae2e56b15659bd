import dataclasses
import math

import numpy as np
import pytest

from conformer import tensor as tt
from conformer.errors import ConfigError, DimensionError
from conformer.models import (ABLATION_ROWS, BlockParams, BlockSpec, ConformerConfig,
                              ContextNetBlockParams, ContextNetConfig, apply_ablation,
                              build_model, conformer_block, conformer_encode, contextnet_block,
                              contextnet_encode, contextnet_reduced_length, count_params,
                              decoder_param_count, get_preset, lr_schedule, param_schema,
                              per_block_count)
from conformer.modules import conv_module, feed_forward, mhsa_relpos
from conformer.params import Allocator, count_leaves, leaf_map, map_leaves, named_leaves
from conformer.tensor import Tensor
from conformer.verify import oracles
from conformer.verify.suites import BLOCK_VARIANTS, randomize

TOY = ConformerConfig(num_layers=2, d_model=16, num_heads=2, conv_kernel=5, n_mels=16)


def variant_cfg(variant, base=TOY):
    return base if variant == "default" else apply_ablation(base, variant)


def random_block(cfg, seed=0):
    return randomize(BlockParams.build(cfg, Allocator(seed)), np.random.default_rng(seed + 7))


# -- Conformer block ---------------------------------------------------------------------

@pytest.mark.parametrize("variant", BLOCK_VARIANTS)
def test_zeroed_block_is_layer_norm(variant, rng):
    cfg = variant_cfg(variant)
    p = BlockParams.build(cfg, Allocator(0))
    def zero(path, leaf):
        leaf.data[...] = 1.0 if path in ("ln/gamma",) or path.endswith("running_var") else 0.0
    map_leaves(p, zero)
    x = rng.standard_normal((5, 16))
    out = conformer_block(Tensor(x), p, cfg).data
    ref = tt.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert out.tobytes() == ref.tobytes()


def test_block_matches_hand_composition(rng):
    cfg = TOY
    p = random_block(cfg)
    x = Tensor(rng.standard_normal((5, 16)))
    h = x + 0.5 * feed_forward(x, p.ffn1)
    h = h + mhsa_relpos(h, p.mhsa, cfg.num_heads)
    h = h + conv_module(h, p.conv)
    h = h + 0.5 * feed_forward(h, p.ffn2)
    expected = oracles.layer_norm_direct(h.data, p.ln.gamma.data, p.ln.beta.data)
    np.testing.assert_allclose(conformer_block(x, p, cfg).data, expected, atol=1e-12)


def test_conv_first_order(rng):
    cfg = variant_cfg("conv_first")
    p = random_block(cfg)
    x = Tensor(rng.standard_normal((5, 16)))
    h = x + 0.5 * feed_forward(x, p.ffn1)
    h = h + conv_module(h, p.conv)
    h = h + mhsa_relpos(h, p.mhsa, cfg.num_heads)
    h = h + 0.5 * feed_forward(h, p.ffn2)
    expected = tt.layer_norm(h, p.ln.gamma, p.ln.beta).data
    np.testing.assert_allclose(conformer_block(x, p, cfg).data, expected, atol=1e-12)


def test_parallel_merge(rng):
    cfg = variant_cfg("parallel")
    p = random_block(cfg)
    assert p.merge.W.shape == (32, 16)
    x = Tensor(rng.standard_normal((5, 16)))
    h = x + 0.5 * feed_forward(x, p.ffn1)
    both = np.hstack([mhsa_relpos(h, p.mhsa, 2).data, conv_module(h, p.conv).data])
    h = h.data + both @ p.merge.W.data + p.merge.b.data
    h = h + 0.5 * feed_forward(Tensor(h), p.ffn2).data
    expected = oracles.layer_norm_direct(h, p.ln.gamma.data, p.ln.beta.data)
    np.testing.assert_allclose(conformer_block(x, p, cfg).data, expected, atol=1e-12)


def test_single_ffn_has_full_residual_after_conv(rng):
    cfg = variant_cfg("single_ffn")
    p = random_block(cfg)
    assert p.ffn1 is None
    x = Tensor(rng.standard_normal((5, 16)))
    h = x + mhsa_relpos(x, p.mhsa, 2)
    h = h + conv_module(h, p.conv)
    h = h + feed_forward(h, p.ffn2)
    expected = tt.layer_norm(h, p.ln.gamma, p.ln.beta).data
    np.testing.assert_allclose(conformer_block(x, p, cfg).data, expected, atol=1e-12)


def test_half_and_full_residual_agree_when_ffn_zero(rng):
    p = random_block(TOY)
    for ffn in (p.ffn1, p.ffn2):
        map_leaves(ffn, lambda path, leaf: leaf.data.__setitem__(..., 0.0))
    x = Tensor(rng.standard_normal((5, 16)))
    half = conformer_block(x, p, TOY).data
    full = conformer_block(x, p, variant_cfg("full_residual")).data
    assert half.tobytes() == full.tobytes()


def test_block_rejects_mismatched_params():
    p = BlockParams.build(TOY, Allocator(0))
    with pytest.raises(ConfigError):
        conformer_block(Tensor(np.ones((4, 16))), p, variant_cfg("no_conv"))


# -- Conformer encoder ------------------------------------------------------------------------

def test_encoder_without_layers_is_subsample(rng):
    from conformer.modules import conv_subsample
    cfg = dataclasses.replace(TOY, num_layers=0)
    model = build_model(cfg, seed=1)
    f = rng.standard_normal((40, 16))
    out = conformer_encode(f, model).data
    assert out.tobytes() == conv_subsample(f, model.subsample).data.tobytes()


def test_encoder_chains_blocks(rng):
    from conformer.modules import conv_subsample
    model = build_model(TOY, seed=2)
    randomize(model, np.random.default_rng(5))
    f = rng.standard_normal((40, 16))
    h = conv_subsample(f, model.subsample)
    for block in model.blocks:
        h = conformer_block(h, block, TOY)
    np.testing.assert_allclose(conformer_encode(f, model).data, h.data, atol=1e-12)


def test_s_preset_t100_shape():
    model = build_model(get_preset("S"), seed=0)
    out = conformer_encode(np.random.default_rng(0).standard_normal((100, 80)), model)
    assert out.shape == (24, 144)


def test_encoder_too_short():
    with pytest.raises(DimensionError):
        conformer_encode(np.zeros((5, 16)), build_model(TOY))


def test_encoder_train_mode_is_seeded(rng):
    model = build_model(TOY, seed=0)
    f = rng.standard_normal((30, 16))
    a = conformer_encode(f, model, "train", np.random.default_rng(9)).data
    b = conformer_encode(f, model, "train", np.random.default_rng(9)).data
    assert a.tobytes() == b.tobytes()


# -- build_model ----------------------------------------------------------------------------------

def test_build_is_deterministic():
    a, b = build_model(TOY, seed=11), build_model(TOY, seed=11)
    for (na, ta), (nb, tb) in zip(named_leaves(a), named_leaves(b)):
        assert na == nb and ta.data.tobytes() == tb.data.tobytes()
    c = build_model(TOY, seed=12)
    assert leaf_map(a)["block0/ffn1/W1"].data.tobytes() != leaf_map(c)["block0/ffn1/W1"].data.tobytes()


def test_init_values():
    model = build_model(TOY, seed=0)
    for name, leaf in named_leaves(model):
        last = name.split("/")[-1]
        if last == "gamma" or last == "running_var":
            assert np.all(leaf.data == 1.0), name
        elif last in ("beta", "running_mean", "u", "v") or last.startswith("b") or last.endswith("bias"):
            assert np.all(leaf.data == 0.0), name
    W1 = leaf_map(model)["block0/ffn1/W1"].data
    assert np.abs(W1).max() <= math.sqrt(6.0 / (16 + 64))


def _documented_block_names(i):
    ffn = ["ln/gamma", "ln/beta", "W1", "b1", "W2", "b2"]
    mhsa = ["ln/gamma", "ln/beta", "Wq", "Wk", "Wv", "Wo", "Wr", "u", "v"]
    conv = ["ln/gamma", "ln/beta", "Wp1", "bp1", "depthwise", "depthwise_bias", "bn/gamma",
            "bn/beta", "bn/running_mean", "bn/running_var", "Wp2", "bp2"]
    names = [f"block{i}/ffn1/{n}" for n in ffn] + [f"block{i}/mhsa/{n}" for n in mhsa]
    names += [f"block{i}/conv/{n}" for n in conv] + [f"block{i}/ffn2/{n}" for n in ffn]
    return names + [f"block{i}/ln/gamma", f"block{i}/ln/beta"]


def test_s_preset_schema_names():
    expected = {"subsample/conv1/kernel", "subsample/conv1/bias", "subsample/conv2/kernel",
                "subsample/conv2/bias", "subsample/proj/W", "subsample/proj/b"}
    for i in range(16):
        expected.update(_documented_block_names(i))
    assert set(leaf_map(param_schema(get_preset("S")))) == expected


def test_schema_matches_built_shapes():
    schema, built = leaf_map(param_schema(TOY)), leaf_map(build_model(TOY))
    assert list(schema) == list(built)
    assert all(schema[n].shape == built[n].shape for n in schema)


# -- counting ---------------------------------------------------------------------------------------

def test_decoder_formula():
    V, e, d, j = 1000, 320, 144, 640
    assert decoder_param_count(320, 144) == V * e + 4 * ((e + e) * e + e) + (d + e) * j + j * V


def test_count_equals_allocated_learnables():
    assert count_params(TOY).encoder == count_leaves(build_model(TOY))


@pytest.mark.parametrize("n", [1, 2, 8])
def test_count_is_affine_in_layers(n):
    s = get_preset("S")
    a = count_params(dataclasses.replace(s, num_layers=n)).encoder
    b = count_params(dataclasses.replace(s, num_layers=2 * n)).encoder
    assert b - a == n * per_block_count(s) > 0


def test_single_ffn_is_smaller_and_heads_neutral():
    L = get_preset("L")
    assert count_params(apply_ablation(L, "single_ffn")).total < count_params(L).total
    for h in (4, 8, 16, 32):
        assert count_params(apply_ablation(L, f"heads({h})")).total == count_params(L).total


def test_kernel_delta_per_layer():
    L = get_preset("L")
    delta = count_params(L).total - count_params(apply_ablation(L, "kernel(3)")).total
    assert delta == 17 * (32 - 3) * 512


def test_preset_totals_within_tolerance():
    for name, target in (("S", 10.3), ("M", 30.7), ("L", 118.8)):
        total = count_params(get_preset(name)).total
        assert abs(total / 1e6 - target) / target < 0.10


# -- ablations ----------------------------------------------------------------------------------------

def test_relu_changes_only_activation():
    base = get_preset("S")
    out = apply_ablation(base, "relu")
    assert out.ablation.activation == "relu"
    assert dataclasses.replace(out, ablation=base.ablation) == base
    assert dataclasses.replace(out.ablation, activation="swish") == base.ablation


def test_sweep_values():
    assert apply_ablation(get_preset("L"), "kernel(65)").conv_kernel == 65
    assert apply_ablation(get_preset("L"), "heads(16)").d_head == 32


@pytest.mark.parametrize("row", [r for r in ABLATION_ROWS if "(" not in r] + ["heads(4)", "kernel(7)"])
def test_ablation_idempotent(row):
    once = apply_ablation(get_preset("M"), row)
    assert apply_ablation(once, row) == once


def test_ablations_commute_on_independent_fields():
    s = get_preset("S")
    assert apply_ablation(apply_ablation(s, "relu"), "kernel(7)") == \
        apply_ablation(apply_ablation(s, "kernel(7)"), "relu")


def test_unknown_ablation_row():
    with pytest.raises(ConfigError):
        apply_ablation(get_preset("S"), "swapped")


def test_config_validation():
    with pytest.raises(ConfigError):
        ConformerConfig(num_layers=1, d_model=10, num_heads=3)
    with pytest.raises(ConfigError):
        get_preset("XL")


# -- ContextNet ---------------------------------------------------------------------------------------

def test_contextnet_block_hand_composition(rng):
    spec = BlockSpec(2, 2)
    p = randomize(ContextNetBlockParams.build(spec, 2, 2, Allocator(0)), np.random.default_rng(3))
    x = rng.standard_normal((4, 2))
    h = x
    for layer in p.convs:
        h = oracles.full_conv1d_loops(h, layer.kernel.data, 2, 2)
        bn = layer.bn
        h = (h - bn.running_mean.data) / np.sqrt(bn.running_var.data + 1e-5) * bn.gamma.data + bn.beta.data
        h = oracles.swish(h)
    se = p.se
    expected = oracles.se_direct(h, se.W1.data, se.b1.data, se.W2.data, se.b2.data) + x
    np.testing.assert_allclose(contextnet_block(Tensor(x), p, spec).data, expected, atol=1e-12)


def test_contextnet_block_zero_path_is_residual(rng):
    spec = BlockSpec(5, 3)
    p = ContextNetBlockParams.build(spec, 3, 3, Allocator(0))
    map_leaves(p, lambda path, leaf: leaf.data.__setitem__(..., 1.0 if path.endswith("running_var") else 0.0))
    x = rng.standard_normal((6, 3))
    assert contextnet_block(Tensor(x), p, spec).data.tobytes() == x.tobytes()


def test_contextnet_stride_halves(rng):
    spec = BlockSpec(5, 4, stride=2)
    p = ContextNetBlockParams.build(spec, 3, 4, Allocator(0))
    assert p.residual is not None
    assert contextnet_block(Tensor(rng.standard_normal((10, 3))), p, spec).shape == (5, 4)


def _tiny_contextnet():
    blocks = (BlockSpec(1, 8, residual=False), BlockSpec(2, 8, stride=2), BlockSpec(2, 8, stride=2),
              BlockSpec(2, 12, stride=2), BlockSpec(1, 6, dilation=2, scaled=False))
    return ContextNetConfig(alpha=1.0, blocks=blocks, n_mels=10)


def test_contextnet_zero_model_chains_projections(rng):
    cfg = _tiny_contextnet()
    model = build_model(cfg, seed=0)
    randomize(model, np.random.default_rng(1))
    def zero(path, leaf):
        if "/residual/" in path:
            return
        leaf.data[...] = 1.0 if path.endswith("running_var") else 0.0
    map_leaves(model, zero)
    x = rng.standard_normal((16, 10))
    h = np.zeros((16, 8))  # first block has no residual path
    for spec, block in zip(cfg.blocks[1:], model.blocks[1:]):
        if block.residual is not None:
            h = h[::spec.stride] @ block.residual.W.data + block.residual.b.data
    np.testing.assert_allclose(contextnet_encode(x, model).data, h, atol=1e-12)


@pytest.mark.parametrize("T", [8, 9, 15, 16, 17, 80, 101])
def test_contextnet_reduction(T, rng):
    cfg = _tiny_contextnet()
    out = contextnet_encode(rng.standard_normal((T, 10)), build_model(cfg))
    expected = T
    for _ in range(3):
        expected = math.ceil(expected / 2)
    assert out.shape == (expected, 6)
    assert contextnet_reduced_length(T, cfg) == expected


def test_contextnet_default_t80():
    assert contextnet_reduced_length(80, ContextNetConfig()) == 10


def test_contextnet_alpha_scaling():
    one, two = ContextNetConfig(alpha=1.0), ContextNetConfig(alpha=2.0)
    assert len(one.blocks) == 31
    for c1, c2, spec in zip(one.channels, two.channels, one.blocks):
        assert c2 == (2 * c1 if spec.scaled else c1)
    assert one.channels[:-1] == [256] * 11 + [512] * 19
    assert [i for i, b in enumerate(one.blocks) if b.stride == 2] == [4, 7, 11]


def test_contextnet_too_short():
    with pytest.raises(DimensionError):
        contextnet_encode(np.zeros((7, 10)), build_model(_tiny_contextnet()))


def test_contextnet_needs_three_strides():
    with pytest.raises(ConfigError):
        ContextNetConfig(blocks=(BlockSpec(1, 4, stride=2),))


# -- learning-rate schedule ------------------------------------------------------------------------------

def test_lr_schedule_values():
    peak = 0.05 / 16
    assert lr_schedule(10000, 256) == 0.003125
    assert lr_schedule(5000, 256) == pytest.approx(peak / 2, rel=1e-15)
    assert lr_schedule(40000, 256) == pytest.approx(peak / 2, rel=1e-15)


def test_lr_schedule_rejects_step_zero():
    with pytest.raises(ConfigError):
        lr_schedule(0, 256)
