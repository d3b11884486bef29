"""Named-tensor checkpoint files.

Layout (little-endian, same conventions as the feature-bundle files):
``b"SCK1"``, u32 tensor count, then per tensor: u32 name length, UTF-8 name,
u32 ndim, ndim x u32 dims, float64 payload. A sidecar ``<path>.manifest``
lists ``name<TAB>shape`` per tensor.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import DimensionError, HeaderError, TruncationError

MAGIC = b"SCK1"


class ShapeMismatchError(ValueError):
    """A checkpoint tensor does not fit the model it is loaded into."""


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    manifest = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts += [struct.pack("<I", len(key)), key, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
        manifest.append(f"{name}\t{'x'.join(map(str, arr.shape)) or 'scalar'}")
    path.write_bytes(b"".join(parts))
    Path(str(path) + ".manifest").write_text("\n".join(manifest) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise HeaderError(f"{path}: not a checkpoint file")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise TruncationError(f"{path}: truncated at byte {len(raw)}")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(raw):
            raise TruncationError(f"{path}: truncated tensor name")
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        if pos + 8 * size > len(raw):
            raise TruncationError(f"{path}: tensor {name!r} truncated")
        out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(raw):
        raise DimensionError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def state_dict(params: Mapping[str, "object"]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def load_state_dict(params: Mapping[str, "object"], state: Mapping[str, np.ndarray]) -> None:
    """Copy ``state`` into ``params`` in place.

    Raises:
        ShapeMismatchError: naming the first missing, unexpected or mis-shaped tensor.
    """
    extra = sorted(set(state) - set(params))
    if extra:
        raise ShapeMismatchError(f"checkpoint tensor {extra[0]!r} has no place in the model")
    for name, p in params.items():
        if name not in state:
            raise ShapeMismatchError(f"checkpoint has no tensor {name!r}")
        if state[name].shape != p.data.shape:
            raise ShapeMismatchError(
                f"tensor {name!r}: checkpoint shape {state[name].shape} "
                f"!= model shape {p.data.shape}")
    for name, p in params.items():
        p.data[...] = state[name]
