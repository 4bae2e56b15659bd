"""Named parameter hierarchies.

A parameter tree is a nest of dataclasses whose leaves are tensors.  Each
params dataclass exposes a ``build(..., make)`` constructor; ``make(shape,
init, fan)`` either allocates a tensor (:class:`Allocator`) or just records
the shape (:class:`ShapeRecorder`), so the same code path defines the schema
used for initialisation, counting and deserialisation.

Leaf names are slash paths (``block3/conv/depthwise``).  List fields name
their items ``<item><i>`` where ``item`` comes from the field metadata.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError
from .tensor import Tensor, default_dtype
from .tensor.io import decode_tensor, encode_tensor

BUFFER_INITS = frozenset({"running_mean", "running_var"})


@dataclass(frozen=True)
class LeafSpec:
    shape: tuple
    init: str

    @property
    def learnable(self):
        return self.init not in BUFFER_INITS

    @property
    def size(self):
        return math.prod(self.shape)


class ShapeRecorder:
    """``make`` callback that allocates nothing."""

    def __call__(self, shape, init, fan=None):
        return LeafSpec(tuple(shape), init)


class Allocator:
    """``make`` callback drawing weights from a seeded stream.

    Weights: uniform(+-sqrt(6 / (fan_in + fan_out))); biases 0; norm gains 1;
    running mean 0 and running variance 1.
    """

    def __init__(self, seed, dtype=None):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype or default_dtype()

    def __call__(self, shape, init, fan=None):
        shape = tuple(shape)
        if init == "xavier":
            fan_in, fan_out = fan if fan is not None else (shape[0], shape[-1])
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init in ("zeros", "running_mean"):
            data = np.zeros(shape)
        elif init in ("ones", "running_var"):
            data = np.ones(shape)
        else:
            raise ConfigError(f"unknown initialiser {init!r}")
        return Tensor(data.astype(self.dtype), requires_grad=init not in BUFFER_INITS)


def list_field(item):
    return dataclasses.field(default_factory=list, metadata={"item": item})


def named_leaves(node, prefix="") -> Iterator[tuple]:
    """Yield ``(path, leaf)`` in construction order; ``None`` fields are skipped."""
    if isinstance(node, (Tensor, LeafSpec)):
        yield prefix.rstrip("/"), node
        return
    if not dataclasses.is_dataclass(node):
        return
    for f in dataclasses.fields(node):
        value = getattr(node, f.name)
        if value is None:
            continue
        if isinstance(value, list):
            item = f.metadata.get("item", f.name)
            for i, child in enumerate(value):
                yield from named_leaves(child, f"{prefix}{item}{i}/")
        elif isinstance(value, (Tensor, LeafSpec)) or dataclasses.is_dataclass(value):
            yield from named_leaves(value, f"{prefix}{f.name}/")


def _is_learnable(leaf):
    return leaf.learnable if isinstance(leaf, LeafSpec) else leaf.requires_grad


def count_leaves(tree, learnable_only=True):
    return sum(math.prod(leaf.shape) for _, leaf in named_leaves(tree)
               if not learnable_only or _is_learnable(leaf))


def leaf_map(tree):
    return dict(named_leaves(tree))


def map_leaves(tree, fn):
    """Apply ``fn(path, tensor)`` to every leaf in place (e.g. zeroing sub-modules)."""
    for path, leaf in named_leaves(tree):
        fn(path, leaf)
    return tree


# -- container format ---------------------------------------------------------
# b"CFKP", u32 entry count, then per entry: u32 name length, UTF-8 name,
# u64 blob length, CFKT blob.

CONTAINER_MAGIC = b"CFKP"


def encode_params(tree) -> bytes:
    leaves = list(named_leaves(tree))
    parts = [CONTAINER_MAGIC, struct.pack("<I", len(leaves))]
    for name, leaf in leaves:
        raw = name.encode("utf-8")
        blob = encode_tensor(leaf)
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", len(blob)), blob]
    return b"".join(parts)


def decode_params(buf: bytes) -> dict:
    if buf[:4] != CONTAINER_MAGIC:
        raise FormatError("magic", f"expected {CONTAINER_MAGIC!r}, got {bytes(buf[:4])!r}")
    try:
        (count,) = struct.unpack_from("<I", buf, 4)
        pos, out = 8, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            name = bytes(buf[pos + 4:pos + 4 + n]).decode("utf-8")
            pos += 4 + n
            (blob_len,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            if pos + blob_len > len(buf):
                raise FormatError("entry", f"blob for {name!r} is truncated")
            tensor, end = decode_tensor(buf[pos:pos + blob_len])
            if end != blob_len:
                raise FormatError("entry", f"blob for {name!r} has trailing bytes")
            out[name] = tensor
            pos += blob_len
    except struct.error:
        raise FormatError("container", "truncated container") from None
    except UnicodeDecodeError:
        raise FormatError("names", "entry name is not valid UTF-8") from None
    if pos != len(buf):
        raise FormatError("container", f"{len(buf) - pos} trailing bytes")
    return out


def load_into(tree, mapping: dict):
    """Copy tensors from ``mapping`` into a skeleton tree; names and shapes must match exactly."""
    leaves = leaf_map(tree)
    missing = sorted(set(leaves) - set(mapping))
    extra = sorted(set(mapping) - set(leaves))
    if missing or extra:
        raise FormatError("names", f"missing {missing[:5]}, unexpected {extra[:5]}")
    for name, leaf in leaves.items():
        src = mapping[name].data
        if src.shape != leaf.shape:
            raise FormatError(name, f"shape {list(src.shape)} != expected {list(leaf.shape)}")
        leaf.data[...] = src
    return tree


def save_params(tree, path):
    with open(path, "wb") as fh:
        fh.write(encode_params(tree))


def load_params(path, skeleton):
    with open(path, "rb") as fh:
        return load_into(skeleton, decode_params(fh.read()))
