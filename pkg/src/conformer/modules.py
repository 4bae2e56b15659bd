"""Conformer sub-modules and the squeeze-and-excitation block.

Each forward function returns the module output *without* its block-level
residual; the block adds residuals with the appropriate weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tt
from .errors import ConfigError, DimensionError
from .tensor import Tensor

LIGHTWEIGHT_GROUPS = 4


# -- parameter containers -------------------------------------------------------

@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def build(cls, d, make):
        return cls(make((d,), "ones"), make((d,), "zeros"))


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor

    @classmethod
    def build(cls, d, make):
        return cls(make((d,), "ones"), make((d,), "zeros"),
                   make((d,), "running_mean"), make((d,), "running_var"))


@dataclass
class FeedForwardParams:
    ln: LayerNormParams
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def build(cls, d, make, expansion=4):
        inner = expansion * d
        return cls(LayerNormParams.build(d, make),
                   make((d, inner), "xavier"), make((inner,), "zeros"),
                   make((inner, d), "xavier"), make((d,), "zeros"))


@dataclass
class MHSAParams:
    ln: LayerNormParams
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    Wo: Tensor
    Wr: Optional[Tensor] = None
    u: Optional[Tensor] = None
    v: Optional[Tensor] = None

    @classmethod
    def build(cls, d, make, relative=True):
        ln = LayerNormParams.build(d, make)
        wq, wk, wv, wo = (make((d, d), "xavier") for _ in range(4))
        if not relative:
            return cls(ln, wq, wk, wv, wo)
        return cls(ln, wq, wk, wv, wo, make((d, d), "xavier"),
                   make((d,), "zeros"), make((d,), "zeros"))


@dataclass
class ConvModuleParams:
    ln: LayerNormParams
    Wp1: Tensor
    bp1: Tensor
    depthwise: Tensor
    depthwise_bias: Tensor
    bn: BatchNormParams
    Wp2: Tensor
    bp2: Tensor

    @classmethod
    def build(cls, d, kernel_size, make, lightweight=False):
        if lightweight:
            if d % LIGHTWEIGHT_GROUPS:
                raise ConfigError(f"lightweight conv needs d divisible by {LIGHTWEIGHT_GROUPS}, got {d}")
            taps = make((kernel_size, LIGHTWEIGHT_GROUPS), "xavier", (kernel_size, kernel_size))
        else:
            taps = make((kernel_size, d), "xavier", (kernel_size, kernel_size))
        return cls(LayerNormParams.build(d, make),
                   make((d, 2 * d), "xavier"), make((2 * d,), "zeros"),
                   taps, make((d,), "zeros"),
                   BatchNormParams.build(d, make),
                   make((d, d), "xavier"), make((d,), "zeros"))


def se_width(d):
    return max(1, d // 8)


@dataclass
class SEParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def build(cls, d, make):
        r = se_width(d)
        return cls(make((d, r), "xavier"), make((r,), "zeros"),
                   make((r, d), "xavier"), make((d,), "zeros"))


@dataclass
class Conv2dParams:
    kernel: Tensor
    bias: Tensor


@dataclass
class LinearParams:
    W: Tensor
    b: Tensor

    @classmethod
    def build(cls, n_in, n_out, make):
        return cls(make((n_in, n_out), "xavier"), make((n_out,), "zeros"))


def subsampled_length(n, kernel=3, stride=2):
    return (n - kernel) // stride + 1


@dataclass
class SubsampleParams:
    conv1: Conv2dParams
    conv2: Conv2dParams
    proj: LinearParams

    @classmethod
    def build(cls, d, n_freq, make, channels=None):
        c = channels or d
        f2 = subsampled_length(subsampled_length(n_freq))
        if f2 < 1:
            raise ConfigError(f"{n_freq} frequency bins is too few for two 3x3 stride-2 convs")
        return cls(Conv2dParams(make((3, 3, 1, c), "xavier", (9, 9 * c)), make((c,), "zeros")),
                   Conv2dParams(make((3, 3, c, c), "xavier", (9 * c, 9 * c)), make((c,), "zeros")),
                   LinearParams.build(c * f2, d, make))


# -- feed-forward ----------------------------------------------------------------

def feed_forward(x, p: FeedForwardParams, mode="infer", rng=None, dropout=0.0, activation="swish"):
    """Dropout(W2 Dropout(Act(W1 LN(x) + b1)) + b2)."""
    if x.shape[-1] != p.W1.shape[0]:
        raise DimensionError(f"input width {x.shape[-1]} does not match W1 {list(p.W1.shape)}")
    h = tt.layer_norm(x, p.ln.gamma, p.ln.beta)
    h = tt.activation(tt.linear(h, p.W1, p.b1), activation)
    h = tt.dropout(h, dropout, mode, rng)
    return tt.dropout(tt.linear(h, p.W2, p.b2), dropout, mode, rng)


# -- positional encodings and attention -----------------------------------------

def _sinusoid(positions, d):
    if d % 2:
        raise ConfigError(f"sinusoidal encoding needs an even model dim, got {d}")
    inv_freq = 1.0 / (10000.0 ** (np.arange(0, d, 2) / d))
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    out = np.empty((len(angles), d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def relative_offsets(T):
    """Offsets ``T-1, ..., 0, ..., -(T-1)`` in row order of :func:`sinusoidal_relpos`."""
    return np.arange(T - 1, -T, -1)


def sinusoidal_relpos(T, d):
    """(2T-1) x d table; row for offset o holds sin/cos(o / 10000^(2i/d)) interleaved."""
    return Tensor(_sinusoid(relative_offsets(T), d))


def sinusoidal_abspos(T, d):
    return Tensor(_sinusoid(np.arange(T), d))


def split_heads(x, h):
    """(T x d) -> (h x T x d/h)."""
    T, d = x.shape
    return tt.transpose(tt.reshape(x, (T, h, d // h)), (1, 0, 2))


def merge_heads(x):
    h, T, dh = x.shape
    return tt.reshape(tt.transpose(x, (1, 0, 2)), (T, h * dh))


def rel_shift(x):
    """Map (h x T x 2T-1) position scores indexed by row m (offset T-1-m) to
    (h x T x T) with out[:, i, j] = x[:, i, T-1-i+j], i.e. offset i-j."""
    h, T, n = x.shape
    if n != 2 * T - 1:
        raise DimensionError(f"rel_shift needs 2T-1={2 * T - 1} columns, got {n}")
    x = tt.pad(x, ((0, 0), (0, 0), (1, 0)))
    x = tt.reshape(x, (h, 2 * T, T))[:, 1:]
    return tt.reshape(x, (h, T, 2 * T - 1))[:, :, :T]


def _center_offsets(R, T):
    rows = R.shape[0]
    if rows < 2 * T - 1 or rows % 2 == 0:
        raise DimensionError(f"relative table with {rows} rows cannot cover offsets +-{T - 1}")
    if rows == 2 * T - 1:
        return R
    mid = rows // 2
    return R[mid - (T - 1):mid + T]


def attention_scores_relpos(q, k, R, u, v):
    """Relative-position attention logits.

    ``q``, ``k``: (h x T x d_head); ``R``: projected relative table (2L-1 x d),
    rows in descending offset order with L >= T; ``u``, ``v``: length-d biases.
    score[h, i, j] = ((q_i + u_h) . k_j + (q_i + v_h) . r_{i-j}) / sqrt(d_head),
    with the position term laid out by :func:`rel_shift`.
    """
    h, T, dh = q.shape
    R = _center_offsets(tt.as_tensor(R), T)
    r = split_heads(R, h)                                   # h x (2T-1) x dh
    u = tt.reshape(tt.as_tensor(u), (h, 1, dh))
    v = tt.reshape(tt.as_tensor(v), (h, 1, dh))
    kt = tt.transpose(k, (0, 2, 1))
    content = tt.matmul(q + u, kt)
    position = rel_shift(tt.matmul(q + v, tt.transpose(r, (0, 2, 1))))
    return (content + position) * (1.0 / math.sqrt(dh))


def mhsa_relpos(x, p: MHSAParams, num_heads, mode="infer", rng=None, dropout=0.0,
                variant="relative", return_weights=False):
    """Pre-norm multi-head self-attention; ``variant`` is ``relative`` or ``absolute``.

    The absolute variant adds fixed sinusoids to the module input and uses
    plain scaled dot-product logits.
    """
    T, d = x.shape
    if d % num_heads:
        raise DimensionError(f"model dim {d} is not divisible by {num_heads} heads")
    dh = d // num_heads
    if variant == "absolute":
        x = x + sinusoidal_abspos(T, d).data.astype(x.dtype)
    elif variant != "relative":
        raise ConfigError(f"unknown attention variant {variant!r}")
    xn = tt.layer_norm(x, p.ln.gamma, p.ln.beta)
    q = split_heads(tt.matmul(xn, p.Wq), num_heads)
    k = split_heads(tt.matmul(xn, p.Wk), num_heads)
    val = split_heads(tt.matmul(xn, p.Wv), num_heads)
    if variant == "relative":
        if p.Wr is None or p.u is None or p.v is None:
            raise ConfigError("relative attention needs Wr, u and v")
        pos = tt.matmul(sinusoidal_relpos(T, d).data.astype(x.dtype), p.Wr)
        scores = attention_scores_relpos(q, k, pos, p.u, p.v)
    else:
        scores = tt.matmul(q, tt.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    weights = tt.softmax(scores, axis=-1)
    ctx = merge_heads(tt.matmul(weights, val))
    out = tt.dropout(tt.matmul(ctx, p.Wo), dropout, mode, rng)
    return (out, weights) if return_weights else out


# -- convolution module ------------------------------------------------------------

def same_padding(k):
    """(left, right) zero padding that keeps length for a stride-1 kernel of width k."""
    return (k - 1) // 2, k // 2


def lightweight_taps(taps, d):
    """Softmax-normalise (k x g) taps over k and share each column across d/g channels."""
    k, g = taps.shape
    if d % g:
        raise DimensionError(f"{d} channels do not split into {g} groups")
    norm = tt.softmax(taps, axis=0)
    return norm[:, np.arange(d) // (d // g)]


def depthwise_taps(p: ConvModuleParams, d, variant):
    if variant == "depthwise":
        return p.depthwise
    if variant == "lightweight":
        return lightweight_taps(p.depthwise, d)
    raise ConfigError(f"unknown conv variant {variant!r}")


def conv_module(x, p: ConvModuleParams, mode="infer", rng=None, dropout=0.0,
                variant="depthwise", activation="swish"):
    """Dropout(Wp2 Act(BN(DepthwiseConv(GLU(Wp1 LN(x)))))); length preserving."""
    T, d = x.shape
    if p.Wp1.shape != (d, 2 * d):
        raise DimensionError(f"Wp1 {list(p.Wp1.shape)} does not match model dim {d}")
    h = tt.layer_norm(x, p.ln.gamma, p.ln.beta)
    h = tt.glu(tt.linear(h, p.Wp1, p.bp1))
    taps = depthwise_taps(p, d, variant)
    h = tt.conv1d(h, taps, p.depthwise_bias, "depthwise", same_padding(taps.shape[0]))
    h = tt.batch_norm(h, p.bn.gamma, p.bn.beta, p.bn.running_mean, p.bn.running_var, mode)
    h = tt.activation(h, activation)
    return tt.dropout(tt.linear(h, p.Wp2, p.bp2), dropout, mode, rng)


# -- squeeze-and-excitation ----------------------------------------------------------

def window_bounds(T, w):
    """Inclusive-exclusive [lo, hi) window of length w centred on each t, truncated at the edges."""
    left = (w - 1) // 2
    right = w - 1 - left
    t = np.arange(T)
    return np.maximum(t - left, 0), np.minimum(t + right + 1, T)


def window_average_matrix(T, w, dtype=np.float64):
    lo, hi = window_bounds(T, w)
    A = np.zeros((T, T), dtype=dtype)
    for t in range(T):
        A[t, lo[t]:hi[t]] = 1.0 / (hi[t] - lo[t])
    return A


def se_block(x, p: SEParams, context="global", window=None, activation="swish"):
    """theta(x) * x with theta = sigmoid(W2 Act(W1 pool(x) + b1) + b2).

    ``context="global"`` pools over all frames; ``context="window"`` averages a
    length-``window`` neighbourhood per frame and gates each frame separately.
    """
    T = x.shape[0]
    if T == 0:
        raise DimensionError("se_block on an empty input")
    if context == "global":
        pooled = tt.mean(x, axis=0, keepdims=True)
    elif context == "window":
        if window is None or window < 1:
            raise ConfigError(f"windowed SE needs window >= 1, got {window}")
        pooled = tt.matmul(window_average_matrix(T, window, x.dtype), x)
    else:
        raise ConfigError(f"unknown SE context {context!r}")
    hidden = tt.activation(tt.linear(pooled, p.W1, p.b1), activation)
    theta = tt.sigmoid(tt.linear(hidden, p.W2, p.b2))
    return theta * x


# -- convolutional subsampling ------------------------------------------------------------

def subsample_length(T):
    return subsampled_length(subsampled_length(T))


def conv_subsample(features, p: SubsampleParams, mode="infer", rng=None, dropout=0.0):
    """Two (3x3 stride-2 conv + swish) stages over time x freq, flatten, project to d."""
    f = features.data if hasattr(features, "frame_rate") else features
    f = tt.as_tensor(f)
    T, F = f.shape
    if T < 7 or F < 7:
        raise DimensionError(f"subsampling needs at least 7 frames and 7 bins, got {T}x{F}")
    h = tt.reshape(f, (T, F, 1))
    h = tt.swish(tt.conv2d(h, p.conv1.kernel, p.conv1.bias, stride=2))
    h = tt.swish(tt.conv2d(h, p.conv2.kernel, p.conv2.bias, stride=2))
    t2, f2, c = h.shape
    h = tt.reshape(h, (t2, f2 * c))
    if h.shape[1] != p.proj.W.shape[0]:
        raise DimensionError(f"flattened width {h.shape[1]} does not match projection {list(p.proj.W.shape)}")
    return tt.dropout(tt.linear(h, p.proj.W, p.proj.b), dropout, mode, rng)
