"""Single-file checkpoints: a JSON header followed by raw little-endian float64 blobs.

Layout::

    b"CLH3GCKP" | uint32 format version | uint64 header length | header (UTF-8 JSON) | data

The header carries the config, free-form metadata, and for every tensor its
name, shape, byte offset into the data section and byte length.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ContractError

MAGIC = b"CLH3GCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def save_checkpoint(
    path: str | os.PathLike,
    tensors: dict[str, np.ndarray],
    config: dict[str, Any],
    metadata: dict[str, Any] | None = None,
) -> None:
    """Write atomically: the previous file at ``path`` survives any failure."""
    entries, blobs, offset = [], [], 0
    for name, array in tensors.items():
        raw = np.ascontiguousarray(array, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(array)), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "metadata": metadata or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")

    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
            fh.write(header)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any], dict[str, Any]]:
    """Return ``(tensors, config, metadata)``."""
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise ContractError(f"{path}: truncated checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(blob[start : start + header_len].decode("utf-8"))
    data = memoryview(blob)[start + header_len :]
    tensors = {}
    for entry in header["tensors"]:
        raw = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return tensors, header["config"], header["metadata"]
