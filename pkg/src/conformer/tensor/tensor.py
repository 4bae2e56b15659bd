"""Dense tensor type and the append-only tape used for reverse-mode autodiff.

Every differentiable kernel produces its output through :func:`record`, which
appends one node holding the op name, its inputs and a closure mapping the
output cotangent to input cotangents.  ``backward`` walks the tape in strict
reverse append order, so a node is always processed after every node that
consumed its output.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NumericError

_state = threading.local()

_DTYPES = {"float64": np.float64, "float32": np.float32}


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _get("dtype", np.float64)


def set_default_dtype(dtype):
    """Switch the working precision for newly created tensors (per thread)."""
    if isinstance(dtype, str):
        try:
            dtype = _DTYPES[dtype]
        except KeyError:
            raise ValueError(f"unsupported precision {dtype!r}") from None
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported precision {dtype!r}")
    _state.dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    old = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


def is_grad_enabled():
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run kernels without recording on the tape."""
    old = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def anomaly_enabled():
    return _get("anomaly", False)


@contextlib.contextmanager
def detect_anomaly():
    """Raise :class:`NumericError` as soon as any kernel emits a non-finite value."""
    old = anomaly_enabled()
    _state.anomaly = True
    try:
        yield
    finally:
        _state.anomaly = old


@dataclass
class Node:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable


@dataclass
class Tape:
    """Append-only record of differentiable ops; single owner, not thread-safe."""

    nodes: list = field(default_factory=list)
    generation: int = 0

    def append(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def reset(self):
        self.nodes.clear()
        self.generation += 1

    def __len__(self):
        return len(self.nodes)


def current_tape():
    tape = _get("tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


@contextlib.contextmanager
def use_tape(tape):
    """Record onto ``tape`` instead of the thread's default tape."""
    old = _get("tape", None)
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = old


class Tensor:
    """Row-major real array with optional gradient and tape linkage.

    ``tape_id`` is the index of the producing node on its tape, ``None`` for
    leaves.  Only leaves with ``requires_grad`` receive ``grad`` on backward.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape_id", "_tape", "_generation")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape_id = None
        self._tape = None
        self._generation = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self.tape_id is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    def __len__(self):
        return self.shape[0]

    # Operator sugar; kernels live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor],
           backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and append a tape node when needed.

    ``backward`` receives the output cotangent and returns one cotangent (or
    ``None``) per input, in order.
    """
    if anomaly_enabled() and not np.all(np.isfinite(data)):
        raise NumericError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.tape_id = None
    out._tape = None
    out._generation = None
    needs = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        tape = current_tape()
        out._tape = tape
        out._generation = tape.generation
        out.tape_id = tape.append(Node(op, tuple(inputs), out, backward))
    return out


def backward(loss: Tensor):
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    The tape that recorded ``loss`` is consumed (reset) afterwards.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad=True")
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data)
        return
    tape = loss._tape
    if loss._generation != tape.generation:
        raise ContractError("loss was recorded on a tape that has since been consumed")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if inp.is_leaf:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for key, leaf in leaves.items():
        leaf.grad = np.asarray(grads[key], dtype=leaf.data.dtype).reshape(leaf.shape)
    tape.reset()
