"""Bit-exact checkpoint serialization for named parameter tensors.

Layout: magic ``UIKA`` | format version (u32 LE) | manifest length
(u32 LE) | UTF-8 JSON manifest (tensor names, shapes, dtype) | raw
little-endian IEEE-754 arrays in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .optim import ParamSet

MAGIC = b"UIKA"
FORMAT_VERSION = 1
_DTYPE = "<f8"


class CheckpointError(IOError):
    """Raised when a checkpoint cannot be written or read back."""


def save_checkpoint(params: ParamSet, path: str | Path) -> None:
    names = sorted(params)
    manifest = json.dumps(
        {"tensors": [{"name": n, "shape": list(params[n].shape), "dtype": _DTYPE} for n in names]}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype=_DTYPE).tobytes())


def load_checkpoint(path: str | Path, expected_shapes: dict[str, tuple[int, ...]] | None = None) -> ParamSet:
    """Load a checkpoint; optionally verify tensor shapes against a model.

    Raises CheckpointError on bad magic, unsupported version, truncation,
    trailing bytes, or (when expected_shapes is given) the first tensor
    whose shape disagrees.
    """
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (manifest_len,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + manifest_len:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[12 : 12 + manifest_len].decode("utf-8"))
        entries = manifest["tensors"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: bad manifest: {exc}") from exc

    params: ParamSet = {}
    offset = 12 + manifest_len
    for entry in entries:
        name = entry["name"]
        shape = tuple(int(d) for d in entry["shape"])
        if entry.get("dtype") != _DTYPE:
            raise CheckpointError(f"{path}: tensor {name!r} has unsupported dtype {entry.get('dtype')!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated data for tensor {name!r}")
        params[name] = np.frombuffer(blob[offset : offset + nbytes], dtype=_DTYPE).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after tensor data")

    if expected_shapes is not None:
        for entry in entries:
            name = entry["name"]
            if name in expected_shapes and params[name].shape != tuple(expected_shapes[name]):
                raise CheckpointError(
                    f"{path}: tensor {name!r} has shape {params[name].shape}, "
                    f"expected {tuple(expected_shapes[name])}"
                )
        missing = set(expected_shapes) - set(params)
        if missing:
            raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    return params
