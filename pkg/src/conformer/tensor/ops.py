"""Forward kernels with their reverse-mode rules.

All kernels take and return :class:`Tensor`; plain arrays and scalars are
promoted as constants.  Backward closures capture only what they need.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, record


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _const(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data
    out = ad / bd
    return record("div", out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape),
                             _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    return record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return record("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a):
    out = np.sqrt(a.data)
    return record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


# -- shape manipulation -------------------------------------------------------

def reshape(a, shape):
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {list(src)} into {list(shape)}") from None
    return record("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis
               for i in items)


def getitem(a, index):
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    src_shape, dtype = a.shape, a.data.dtype
    basic = _is_basic_index(index)

    def bw(g):
        out = np.zeros(src_shape, dtype=dtype)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return record("getitem", a.data[index], (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shapes {[list(t.shape) for t in tensors]}: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record("concat", out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def split(a, sections, axis=-1):
    """Split into equal ``sections`` along ``axis`` (differentiable views)."""
    n = a.shape[axis]
    if n % sections:
        raise DimensionError(f"axis of extent {n} does not split into {sections} equal parts")
    step = n // sections
    axis = axis % a.ndim
    out = []
    for s in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(s * step, (s + 1) * step)
        out.append(getitem(a, tuple(idx)))
    return out


def pad(a, pad_width):
    """Zero-pad; ``pad_width`` follows :func:`numpy.pad`."""
    pad_width = [tuple(p) for p in pad_width]
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return record("pad", np.pad(a.data, pad_width), (a,), lambda g: (g[crop],))


def sum(a, axis=None, keepdims=False):
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return record("sum", np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum(a, axis, keepdims) * (1.0 / count)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    """Matrix product; leading axes broadcast like :func:`numpy.matmul`.

    C[i][j] = sum_p A[i][p] B[p][j]; dA = dC B^T, dB = A^T dC.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record("matmul", out, (a, b), bw)


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- activations --------------------------------------------------------------

def _sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _sigmoid(a.data)
    return record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def _swish_grad(x, s):
    """d/dx [x * sigmoid(x)] given s = sigmoid(x)."""
    return s * (1.0 + x * (1.0 - s))


def swish(a):
    """x * sigmoid(x) with beta fixed to 1."""
    x = a.data
    s = _sigmoid(x)
    return record("swish", x * s, (a,), lambda g: (g * _swish_grad(x, s),))


def relu(a):
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,),
                  lambda g: (g * mask,))


def identity(a):
    return a


ACTIVATIONS = {"swish": swish, "relu": relu, "sigmoid": sigmoid, "identity": identity}


def activation(a, kind):
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(a)


def glu(a):
    """a * sigmoid(b) where (a, b) are the first and second halves of the last axis."""
    n = a.shape[-1]
    if n % 2:
        raise DimensionError(f"GLU needs an even last extent, got {n}")
    h = n // 2
    val, gate = a.data[..., :h], a.data[..., h:]
    s = _sigmoid(gate)

    def bw(g):
        return (np.concatenate([g * s, g * val * s * (1.0 - s)], axis=-1),)

    return record("glu", val * s, (a,), bw)


def softmax(a, axis=-1):
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (a,), bw)


# -- normalisation ------------------------------------------------------------

LAYER_NORM_EPS = 1e-6
BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.9


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    """Normalise over the last axis, then apply the affine map."""
    if x.shape[-1] == 0:
        raise DimensionError("layer_norm over a zero-length axis")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(xd.ndim - 1))

    def bw(g):
        gx = g * gd
        gxd = inv * (gx - gx.mean(axis=-1, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return gxd, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", xhat * gd + beta.data, (x, gamma, beta), bw)


def batch_norm(x, gamma, beta, running_mean, running_var, mode="infer",
               eps=BATCH_NORM_EPS, momentum=BATCH_NORM_MOMENTUM):
    """Per-channel normalisation over every axis but the last (batch x time).

    Train mode normalises with batch statistics and updates the running
    buffers in place: ``running = momentum * running + (1 - momentum) * batch``.
    """
    xd = x.data
    lead = tuple(range(xd.ndim - 1))
    n = int(np.prod([xd.shape[i] for i in lead])) if lead else 1
    if n == 0 or xd.shape[-1] == 0:
        raise DimensionError("batch_norm over a zero-length axis")
    gd = gamma.data
    if mode == "infer":
        inv = 1.0 / np.sqrt(running_var.data + eps)
        xhat = (xd - running_mean.data) * inv
        return record("batch_norm", xhat * gd + beta.data, (x, gamma, beta),
                      lambda g: (g * gd * inv, (g * xhat).sum(axis=lead), g.sum(axis=lead)))
    if mode != "train":
        raise ConfigError(f"unknown mode {mode!r}")
    mu = xd.mean(axis=lead)
    xc = xd - mu
    var = (xc * xc).mean(axis=lead)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    unbiased = var * n / (n - 1) if n > 1 else var
    running_mean.data[...] = momentum * running_mean.data + (1.0 - momentum) * mu
    running_var.data[...] = momentum * running_var.data + (1.0 - momentum) * unbiased

    def bw(g):
        gx = g * gd
        gxd = inv * (gx - gx.mean(axis=lead) - xhat * (gx * xhat).mean(axis=lead))
        return gxd, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("batch_norm", xhat * gd + beta.data, (x, gamma, beta), bw)


def norm(x, kind, params, mode="infer"):
    """Dispatch to layer or batch norm; ``params`` carries gamma/beta (and running stats)."""
    if kind == "layer":
        return layer_norm(x, params.gamma, params.beta)
    if kind == "batch":
        return batch_norm(x, params.gamma, params.beta, params.running_mean,
                          params.running_var, mode=mode)
    raise ConfigError(f"unknown norm kind {kind!r}")


# -- dropout ------------------------------------------------------------------

def dropout(x, p, mode="infer", rng=None):
    """Inverted dropout; identity in infer mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    if mode == "infer" or p == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"unknown mode {mode!r}")
    if rng is None:
        raise ConfigError("train-mode dropout needs a seeded rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# -- convolution --------------------------------------------------------------

def conv1d(x, kernel, bias=None, mode="depthwise", padding=(0, 0), stride=1, dilation=1):
    """1-D convolution over time of a (T x C_in) input.

    Modes and kernel layouts:
      depthwise  (k x C),               C_out = C
      pointwise  (C_in x C_out),        k = 1
      full       (k x C_in x C_out)

    Zero padding ``(left, right)``; ``T' = (T + left + right - dil*(k-1) - 1)//stride + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 2:
        raise DimensionError(f"conv1d expects a (T x C) input, got {list(x.shape)}")
    T, cin = x.shape
    if mode == "pointwise":
        if kernel.ndim != 2 or kernel.shape[0] != cin:
            raise DimensionError(f"pointwise kernel {list(kernel.shape)} does not match {cin} input channels")
        w = reshape(kernel, (1, cin, kernel.shape[1]))
        return conv1d(x, w, bias, "full", padding, stride, dilation)
    if mode == "depthwise":
        if kernel.ndim != 2 or kernel.shape[1] != cin:
            raise DimensionError(f"depthwise kernel {list(kernel.shape)} does not match {cin} channels")
    elif mode == "full":
        if kernel.ndim != 3 or kernel.shape[1] != cin:
            raise DimensionError(f"full kernel {list(kernel.shape)} does not match {cin} input channels")
    else:
        raise ConfigError(f"unknown conv1d mode {mode!r}")
    k = kernel.shape[0]
    left, right = padding
    span = dilation * (k - 1) + 1
    padded = T + left + right
    if span > padded:
        raise DimensionError(f"kernel span {span} wider than padded input length {padded}")
    t_out = (padded - span) // stride + 1
    xd = np.pad(x.data, ((left, right), (0, 0)))
    kd = kernel.data

    def tap(j):
        start = j * dilation
        return slice(start, start + stride * (t_out - 1) + 1, stride)

    if mode == "depthwise":
        out = np.zeros((t_out, cin), dtype=xd.dtype)
        for j in range(k):
            out += xd[tap(j)] * kd[j]
    else:
        out = np.zeros((t_out, kd.shape[2]), dtype=xd.dtype)
        for j in range(k):
            out += xd[tap(j)] @ kd[j]

    def bw(g):
        gx = np.zeros_like(xd)
        gk = np.zeros_like(kd)
        for j in range(k):
            sl = tap(j)
            if mode == "depthwise":
                gx[sl] += g * kd[j]
                gk[j] = (xd[sl] * g).sum(axis=0)
            else:
                gx[sl] += g @ kd[j].T
                gk[j] = xd[sl].T @ g
        return gx[left:left + T], gk

    y = record(f"conv1d_{mode}", out, (x, kernel), bw)
    return y if bias is None else add(y, bias)


def conv2d(x, kernel, bias=None, stride=1):
    """Valid 2-D convolution of a (T x F x C_in) input with a (kt x kf x C_in x C_out) kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4 or kernel.shape[2] != x.shape[2]:
        raise DimensionError(f"conv2d shapes do not match: input {list(x.shape)}, kernel {list(kernel.shape)}")
    T, F, _ = x.shape
    kt, kf, _, cout = kernel.shape
    if kt > T or kf > F:
        raise DimensionError(f"input {list(x.shape)} smaller than kernel {kt}x{kf}")
    t_out = (T - kt) // stride + 1
    f_out = (F - kf) // stride + 1
    xd, kd = x.data, kernel.data

    def window(a, b):
        return (slice(a, a + stride * (t_out - 1) + 1, stride),
                slice(b, b + stride * (f_out - 1) + 1, stride))

    out = np.zeros((t_out, f_out, cout), dtype=xd.dtype)
    for a in range(kt):
        for b in range(kf):
            out += xd[window(a, b)] @ kd[a, b]

    def bw(g):
        gx = np.zeros_like(xd)
        gk = np.zeros_like(kd)
        g2 = g.reshape(-1, cout)
        for a in range(kt):
            for b in range(kf):
                win = window(a, b)
                gx[win] += g @ kd[a, b].T
                gk[a, b] = xd[win].reshape(-1, xd.shape[2]).T @ g2
        return gx, gk

    y = record("conv2d", out, (x, kernel), bw)
    return y if bias is None else add(y, bias)
