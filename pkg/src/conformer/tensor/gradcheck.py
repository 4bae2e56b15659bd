"""Central finite-difference checking of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericError
from .tensor import Tensor, backward, detect_anomaly, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tol=1e-5):
        return self.max_rel_err < tol


def grad_check(f, x: Tensor, eps: float = 1e-5) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f(x)`` with central differences.

    ``f`` must be deterministic (infer-mode dropout, or a fixed mask).  The
    relative error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if x.data.dtype != np.float64:
        raise ContractError("grad_check needs 64-bit tensors")
    x.requires_grad = True
    x.grad = None
    with detect_anomaly():
        loss = f(x)
        if loss.shape != ():
            raise ContractError(f"grad_check needs a scalar function, got shape {list(loss.shape)}")
        backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    with no_grad(), detect_anomaly():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(x).item()
            flat[i] = orig - eps
            fm = f(x).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * eps)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("grad_check", "finite differences produced non-finite values")

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    return GradCheckReport(float(err.max()) if err.size else 0.0,
                           tuple(int(i) for i in worst), analytic, numeric)


def directional_check(f, tensors, rng, eps=1e-5):
    """Compare ``sum_i <grad_i, delta_i>`` with a central difference along a random unit direction.

    Cheap whole-parameter-set check; returns the relative error in the same
    ``|a - n| / max(1, |a|, |n|)`` form as :func:`grad_check`.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    with detect_anomaly():
        loss = f()
        backward(loss)
    deltas = [rng.standard_normal(t.shape) for t in tensors]
    norm = np.sqrt(sum(float(np.sum(dl * dl)) for dl in deltas))
    deltas = [dl / norm for dl in deltas]
    analytic = float(sum(np.sum((t.grad if t.grad is not None else 0.0) * dl)
                            for t, dl in zip(tensors, deltas)))
    originals = [t.data.copy() for t in tensors]
    with no_grad(), detect_anomaly():
        for t, o, dl in zip(tensors, originals, deltas):
            t.data[...] = o + eps * dl
        fp = f().item()
        for t, o, dl in zip(tensors, originals, deltas):
            t.data[...] = o - eps * dl
        fm = f().item()
    for t, o in zip(tensors, originals):
        t.data[...] = o
    numeric = (fp - fm) / (2.0 * eps)
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
