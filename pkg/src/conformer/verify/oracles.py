"""Naive loop references, deliberately written without the tensor core."""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(A, B):
    m, k = A.shape
    k2, n = B.shape
    assert k == k2
    C = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += A[i, p] * B[p, j]
            C[i, j] = s
    return C


def depthwise_conv1d_loops(x, kernel, left, right):
    T, C = x.shape
    k = kernel.shape[0]
    t_out = T + left + right - k + 1
    y = np.zeros((t_out, C))
    for t in range(t_out):
        for c in range(C):
            s = 0.0
            for j in range(k):
                src = t + j - left
                if 0 <= src < T:
                    s += x[src, c] * kernel[j, c]
            y[t, c] = s
    return y


def full_conv1d_loops(x, kernel, left, right, stride=1, dilation=1):
    T, cin = x.shape
    k, _, cout = kernel.shape
    t_out = (T + left + right - dilation * (k - 1) - 1) // stride + 1
    y = np.zeros((t_out, cout))
    for t in range(t_out):
        for o in range(cout):
            s = 0.0
            for j in range(k):
                src = t * stride + j * dilation - left
                if 0 <= src < T:
                    for c in range(cin):
                        s += x[src, c] * kernel[j, c, o]
            y[t, o] = s
    return y


def conv2d_loops(x, kernel, stride=1):
    T, F, cin = x.shape
    kt, kf, _, cout = kernel.shape
    t_out = (T - kt) // stride + 1
    f_out = (F - kf) // stride + 1
    y = np.zeros((t_out, f_out, cout))
    for t in range(t_out):
        for f in range(f_out):
            for o in range(cout):
                s = 0.0
                for a in range(kt):
                    for b in range(kf):
                        for c in range(cin):
                            s += x[t * stride + a, f * stride + b, c] * kernel[a, b, c, o]
                y[t, f, o] = s
    return y


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def swish(z):
    return z * sigmoid(z)


def glu_split(x):
    h = x.shape[-1] // 2
    return x[..., :h] * sigmoid(x[..., h:])


def rel_sinusoid_row(offset, d):
    row = np.zeros(d)
    for i in range(d // 2):
        angle = offset / 10000.0 ** (2 * i / d)
        row[2 * i] = math.sin(angle)
        row[2 * i + 1] = math.cos(angle)
    return row


def rel_scores_bruteforce(q, k, R, u, v):
    """score[h,i,j] = ((q_i+u_h).k_j + (q_i+v_h).r_{i-j}) / sqrt(dh), indexing R by offset.

    R has 2T-1 rows in descending offset order, so offset o lives at row T-1-o.
    """
    H, T, dh = q.shape
    u = u.reshape(H, dh)
    v = v.reshape(H, dh)
    r = R.reshape(2 * T - 1, H, dh)
    out = np.zeros((H, T, T))
    for h in range(H):
        for i in range(T):
            for j in range(T):
                row = r[T - 1 - (i - j), h]
                out[h, i, j] = (np.dot(q[h, i] + u[h], k[h, j]) + np.dot(q[h, i] + v[h], row)) / math.sqrt(dh)
    return out


def se_direct(x, W1, b1, W2, b2, window=None):
    """Per-frame SE gate evaluated straight from the formula (swish bottleneck)."""
    T, d = x.shape
    y = np.zeros_like(x)
    for t in range(T):
        if window is None:
            pooled = x.mean(axis=0)
        else:
            left = (window - 1) // 2
            right = window - 1 - left
            lo, hi = max(0, t - left), min(T, t + right + 1)
            pooled = x[lo:hi].mean(axis=0)
        theta = sigmoid(swish(pooled @ W1 + b1) @ W2 + b2)
        y[t] = theta * x[t]
    return y


def layer_norm_direct(x, gamma, beta, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def softmax_direct(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mhsa_dense(x, ln_gamma, ln_beta, Wq, Wk, Wv, Wo, Wr, u, v, heads):
    """Relative-position MHSA computed densely with explicit per-head loops."""
    T, d = x.shape
    dh = d // heads
    xn = layer_norm_direct(x, ln_gamma, ln_beta)
    Q, K, V = xn @ Wq, xn @ Wk, xn @ Wv
    table = np.stack([rel_sinusoid_row(o, d) for o in range(T - 1, -T, -1)]) @ Wr
    ctx = np.zeros((T, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        q, k, val = Q[:, sl], K[:, sl], V[:, sl]
        scores = rel_scores_bruteforce(q[None], k[None], table[:, sl], u[sl], v[sl])[0]
        ctx[:, sl] = softmax_direct(scores) @ val
    return ctx @ Wo
