"""Flat-file parameter checkpoints: JSON manifest line + float64 buffers.

Layout: the first line is a JSON object {"tensors": {name: shape}} with keys
sorted; after the newline the raw little-endian float64 buffers follow, one
per tensor, in the same sorted-name order.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import DataError


def save_checkpoint(path, tensors: dict[str, Tensor]) -> None:
    names = sorted(tensors)
    manifest = {"tensors": {n: list(tensors[n].data.shape) for n in names}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint into plain arrays keyed by tensor name."""
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing manifest line")
    try:
        manifest = json.loads(blob[:nl].decode("utf-8"))
        shapes = {str(k): tuple(int(s) for s in v)
                  for k, v in manifest["tensors"].items()}
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: bad manifest: {exc}") from exc
    out: dict[str, np.ndarray] = {}
    offset = nl + 1
    for name in sorted(shapes):
        shape = shapes[name]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise DataError(f"{path}: truncated buffer for {name!r}")
        out[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return out


def restore_into(tensors: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into live tensors; names and shapes must match exactly."""
    missing = sorted(set(tensors) - set(arrays))
    extra = sorted(set(arrays) - set(tensors))
    if missing or extra:
        raise DataError(f"checkpoint mismatch: missing={missing[:3]} extra={extra[:3]}")
    for name, t in tensors.items():
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise DataError(f"checkpoint shape mismatch for {name!r}: "
                            f"{arr.shape} vs {t.data.shape}")
        t.data = np.ascontiguousarray(arr, dtype=np.float64)
