"""Verification suites behind ``conformer verify``: gradient checks and loop oracles."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import tensor as tt
from ..errors import NumericError
from ..models import (BlockSpec, ConformerConfig, ContextNetBlockParams, apply_ablation,
                      conformer_block, contextnet_block)
from ..models.conformer import BlockParams
from ..modules import (ConvModuleParams, FeedForwardParams, MHSAParams, SEParams, SubsampleParams,
                       attention_scores_relpos, conv_module, conv_subsample, feed_forward,
                       mhsa_relpos, rel_shift, se_block)
from ..params import Allocator, named_leaves
from ..tensor import Tensor
from . import oracles

GRAD_TOL = 1e-5
ORACLE_TOL = 1e-12
EPS = 1e-5

# Block variants exercised by the gradient suite: every ablation row plus the default.
BLOCK_VARIANTS = ("default", "relu", "no_conv", "single_ffn", "abs_pos", "lightweight",
                  "conv_first", "parallel", "full_residual", "heads(4)", "kernel(3)")


@dataclass
class CheckResult:
    suite: str
    name: str
    max_err: float
    tol: float
    runs: int

    @property
    def passed(self):
        return bool(np.isfinite(self.max_err)) and self.max_err < self.tol


def randomize(tree, rng, scale=0.5):
    """Overwrite every leaf with random values so no gradient path is trivially zero."""
    for path, leaf in named_leaves(tree):
        if path.endswith("running_var"):
            leaf.data[...] = rng.uniform(0.5, 1.5, leaf.shape)
        elif path.endswith("gamma"):
            leaf.data[...] = 1.0 + scale * rng.standard_normal(leaf.shape)
        else:
            leaf.data[...] = scale * rng.standard_normal(leaf.shape)
    return tree


def _learnable(tree):
    return [leaf for _, leaf in named_leaves(tree) if leaf.requires_grad]


# Each case maps a seed to (f, x, params): f is scalar in x; params get a directional check.
Case = Callable[[int], tuple]


def _op_case(fn, *shapes, positive=False):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal(shapes[0]))
        if positive:
            x.data[...] = np.abs(x.data) + 0.5
        extras = [Tensor(rng.standard_normal(s), requires_grad=True) for s in shapes[1:]]
        w = None

        def f(x):
            nonlocal w
            y = fn(x, *extras)
            if w is None:
                w = np.random.default_rng(seed + 7919).standard_normal(y.shape)
            return tt.sum_(y * w)

        return f, x, extras
    return case


def _bn_case(mode):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((6, 4)))
        gamma = Tensor(1 + 0.3 * rng.standard_normal(4), requires_grad=True)
        beta = Tensor(rng.standard_normal(4), requires_grad=True)
        rm0, rv0 = rng.standard_normal(4), rng.uniform(0.5, 1.5, 4)
        w = rng.standard_normal((6, 4))

        def f(x):
            rm, rv = Tensor(rm0.copy()), Tensor(rv0.copy())
            return tt.sum_(tt.batch_norm(x, gamma, beta, rm, rv, mode) * w)

        return f, x, [gamma, beta]
    return case


def _dropout_case(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((5, 6)))
    w = rng.standard_normal((5, 6))
    return (lambda x: tt.sum_(tt.dropout(x, 0.3, "train", np.random.default_rng(seed)) * w)), x, []


def _module_case(build, forward, shape):
    def case(seed):
        rng = np.random.default_rng(seed)
        p = randomize(build(Allocator(seed)), rng)
        x = Tensor(rng.standard_normal(shape))
        w = None

        def f(x):
            nonlocal w
            y = forward(x, p)
            if w is None:
                w = np.random.default_rng(seed + 104729).standard_normal(y.shape)
            return tt.sum_(y * w)

        return f, x, _learnable(p)
    return case


def _rel_scores_case(seed):
    rng = np.random.default_rng(seed)
    h, T, dh = 2, 4, 3
    k = Tensor(rng.standard_normal((h, T, dh)), requires_grad=True)
    R = Tensor(rng.standard_normal((2 * T - 1, h * dh)), requires_grad=True)
    u = Tensor(rng.standard_normal(h * dh), requires_grad=True)
    v = Tensor(rng.standard_normal(h * dh), requires_grad=True)
    q = Tensor(rng.standard_normal((h, T, dh)))
    w = rng.standard_normal((h, T, T))
    return (lambda q: tt.sum_(attention_scores_relpos(q, k, R, u, v) * w)), q, [k, R, u, v]


BLOCK_BASE = ConformerConfig(num_layers=1, d_model=16, num_heads=2, conv_kernel=32, dropout=0.1)


def block_config(variant):
    return BLOCK_BASE if variant == "default" else apply_ablation(BLOCK_BASE, variant)


def block_case(variant):
    cfg = block_config(variant)
    return _module_case(lambda make: BlockParams.build(cfg, make),
                        lambda x, p: conformer_block(x, p, cfg, mode="infer"), (4, 16))


def _contextnet_case(stride, c_in, c_out):
    spec = BlockSpec(2, c_out, stride=stride)
    return _module_case(lambda make: ContextNetBlockParams.build(spec, c_in, c_out, make),
                        lambda x, p: contextnet_block(x, p, spec, mode="infer"), (6, c_in))


def gradcheck_cases():
    cases = {
        "matmul": _op_case(lambda x, b: tt.matmul(x, b), (3, 4), (4, 5)),
        "add_mul_div": _op_case(lambda x, b: (x + b) * x / (b * b + 1.0), (3, 4), (4,)),
        "exp_log_sqrt": _op_case(lambda x: tt.log(x) + tt.exp(x * 0.3) + tt.sqrt(x), (3, 4), positive=True),
        "sum_mean": _op_case(lambda x: tt.sum_(x, 0) * tt.mean(x, 1, keepdims=True), (3, 4)),
        "reshape_transpose": _op_case(lambda x: tt.transpose(tt.reshape(x, (2, 6)), (1, 0)) * 1.5, (3, 4)),
        "getitem_concat_pad": _op_case(
            lambda x: tt.pad(tt.concat([x[:, [0, 2, 2]], x[::2]], axis=0), ((1, 0), (0, 2))), (4, 3)),
        "swish": _op_case(tt.swish, (4, 5)),
        "relu": _op_case(tt.relu, (4, 5)),
        "sigmoid": _op_case(tt.sigmoid, (4, 5)),
        "glu": _op_case(tt.glu, (3, 6)),
        "softmax": _op_case(lambda x: tt.softmax(x, axis=-1), (3, 5)),
        "layer_norm": _op_case(lambda x, g, b: tt.layer_norm(x, g, b), (3, 6), (6,), (6,)),
        "batch_norm_infer": _bn_case("infer"),
        "batch_norm_train": _bn_case("train"),
        "dropout_train": _dropout_case,
        "conv1d_depthwise": _op_case(lambda x, k, b: tt.conv1d(x, k, b, "depthwise", (1, 2)),
                                     (6, 3), (4, 3), (3,)),
        "conv1d_pointwise": _op_case(lambda x, k: tt.conv1d(x, k, None, "pointwise"), (5, 3), (3, 4)),
        "conv1d_full_strided": _op_case(
            lambda x, k: tt.conv1d(x, k, None, "full", (2, 2), stride=2, dilation=2), (9, 2), (3, 2, 3)),
        "conv2d": _op_case(lambda x, k, b: tt.conv2d(x, k, b, stride=2), (7, 7, 2), (3, 3, 2, 3), (3,)),
        "rel_shift": _op_case(rel_shift, (2, 4, 7)),
        "attention_scores_relpos": _rel_scores_case,
        "feed_forward": _module_case(lambda make: FeedForwardParams.build(8, make),
                                     lambda x, p: feed_forward(x, p), (3, 8)),
        "mhsa_relative": _module_case(lambda make: MHSAParams.build(16, make),
                                      lambda x, p: mhsa_relpos(x, p, 2), (4, 16)),
        "mhsa_absolute": _module_case(lambda make: MHSAParams.build(16, make, relative=False),
                                      lambda x, p: mhsa_relpos(x, p, 2, variant="absolute"), (4, 16)),
        "conv_module_depthwise": _module_case(lambda make: ConvModuleParams.build(8, 5, make),
                                              lambda x, p: conv_module(x, p), (6, 8)),
        "conv_module_lightweight": _module_case(
            lambda make: ConvModuleParams.build(8, 5, make, lightweight=True),
            lambda x, p: conv_module(x, p, variant="lightweight"), (6, 8)),
        "se_global": _module_case(lambda make: SEParams.build(16, make),
                                  lambda x, p: se_block(x, p), (5, 16)),
        "se_window": _module_case(lambda make: SEParams.build(16, make),
                                  lambda x, p: se_block(x, p, "window", 3), (5, 16)),
        "conv_subsample": _module_case(lambda make: SubsampleParams.build(4, 9, make),
                                       lambda x, p: conv_subsample(x, p), (9, 9)),
        "contextnet_block_s1": _contextnet_case(1, 4, 4),
        "contextnet_block_s2": _contextnet_case(2, 3, 4),
    }
    for variant in BLOCK_VARIANTS:
        cases[f"conformer_block[{variant}]"] = block_case(variant)
    return cases


def run_grad_case(name, case, seeds, eps=EPS):
    worst = 0.0
    for seed in seeds:
        f, x, params = case(seed)
        try:
            report = tt.grad_check(f, x, eps)
            err = report.max_rel_err
            if params:
                err = max(err, tt.directional_check(lambda: f(x), params,
                                                    np.random.default_rng(seed + 1), eps))
        except NumericError:
            err = float("inf")
        worst = max(worst, err)
    return CheckResult("gradcheck", name, worst, GRAD_TOL, len(seeds))


# -- oracle suite ---------------------------------------------------------------------

def _oracle_matmul(rng):
    A, B = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    return np.abs(tt.matmul(A, B).data - oracles.matmul_loops(A, B)).max()


def _oracle_conv1d(rng):
    T, C, k = int(rng.integers(4, 17)), int(rng.integers(1, 9)), int(rng.integers(1, 6))
    left, right = int(rng.integers(0, 3)), int(rng.integers(0, 3))
    x, kern = rng.standard_normal((T, C)), rng.standard_normal((k, C))
    dw = np.abs(tt.conv1d(x, kern, None, "depthwise", (left, right)).data
                - oracles.depthwise_conv1d_loops(x, kern, left, right)).max()
    full_k = rng.standard_normal((3, C, 2))
    full = np.abs(tt.conv1d(x, full_k, None, "full", (2, 2), stride=2, dilation=2).data
                  - oracles.full_conv1d_loops(x, full_k, 2, 2, 2, 2)).max()
    return max(dw, full)


def _oracle_conv2d(rng):
    x, k = rng.standard_normal((9, 9, 1)), rng.standard_normal((3, 3, 1, 2))
    e1 = np.abs(tt.conv2d(x, k, stride=2).data - oracles.conv2d_loops(x, k, 2)).max()
    x, k = rng.standard_normal((8, 7, 3)), rng.standard_normal((3, 2, 3, 2))
    e2 = np.abs(tt.conv2d(x, k, stride=1).data - oracles.conv2d_loops(x, k, 1)).max()
    return max(e1, e2)


def _oracle_rel_scores(rng, T_values=range(1, 17), heads=(1, 2, 4), d_heads=(4, 8)):
    worst = 0.0
    for T in T_values:
        for h in heads:
            for dh in d_heads:
                q, k = rng.standard_normal((h, T, dh)), rng.standard_normal((h, T, dh))
                R = rng.standard_normal((2 * T - 1, h * dh))
                u, v = rng.standard_normal(h * dh), rng.standard_normal(h * dh)
                fast = attention_scores_relpos(Tensor(q), Tensor(k), Tensor(R), Tensor(u), Tensor(v)).data
                worst = max(worst, np.abs(fast - oracles.rel_scores_bruteforce(q, k, R, u, v)).max())
    return worst


def _oracle_se(rng):
    x = rng.standard_normal((int(rng.integers(2, 9)), 16))
    p = randomize(SEParams.build(16, Allocator(int(rng.integers(1 << 30)))), rng)
    args = (p.W1.data, p.b1.data, p.W2.data, p.b2.data)
    e1 = np.abs(se_block(Tensor(x), p).data - oracles.se_direct(x, *args)).max()
    e2 = np.abs(se_block(Tensor(x), p, "window", 3).data - oracles.se_direct(x, *args, window=3)).max()
    return max(e1, e2)


def _oracle_glu(rng):
    x = rng.standard_normal((5, 8))
    return np.abs(tt.glu(Tensor(x)).data - oracles.glu_split(x)).max()


def _oracle_mhsa(rng):
    p = randomize(MHSAParams.build(8, Allocator(int(rng.integers(1 << 30)))), rng)
    x = rng.standard_normal((5, 8))
    dense = oracles.mhsa_dense(x, p.ln.gamma.data, p.ln.beta.data, p.Wq.data, p.Wk.data, p.Wv.data,
                               p.Wo.data, p.Wr.data, p.u.data, p.v.data, 2)
    return np.abs(mhsa_relpos(Tensor(x), p, 2).data - dense).max()


ORACLES = {
    "matmul_vs_loops": _oracle_matmul,
    "conv1d_vs_loops": _oracle_conv1d,
    "conv2d_vs_loops": _oracle_conv2d,
    "relpos_shift_vs_bruteforce": _oracle_rel_scores,
    "se_vs_formula": _oracle_se,
    "glu_vs_split": _oracle_glu,
    "mhsa_vs_dense": _oracle_mhsa,
}


def run_oracle_case(name, fn, seeds):
    worst = 0.0
    for seed in seeds:
        worst = max(worst, float(fn(np.random.default_rng(seed))))
    return CheckResult("oracle", name, worst, ORACLE_TOL, len(seeds))


SCALES = {"small": {"grad_seeds": 2, "oracle_seeds": 3},
          "full": {"grad_seeds": 20, "oracle_seeds": 50}}


def run_suite(suite="all", scale="small", jobs=1):
    """Run the selected checks; each worker thread records on its own tape."""
    sizes = SCALES[scale]
    tasks = []
    if suite in ("gradcheck", "all"):
        seeds = range(sizes["grad_seeds"])
        tasks += [(run_grad_case, name, case, seeds) for name, case in gradcheck_cases().items()]
    if suite in ("oracle", "all"):
        seeds = range(sizes["oracle_seeds"])
        tasks += [(run_oracle_case, name, fn, seeds) for name, fn in ORACLES.items()]
    if jobs <= 1:
        return [fn(*args) for fn, *args in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda t: t[0](*t[1:]), tasks))


__all__ = ["BLOCK_VARIANTS", "CheckResult", "ORACLES", "block_case", "block_config", "gradcheck_cases",
           "randomize", "run_grad_case", "run_oracle_case", "run_suite"]
