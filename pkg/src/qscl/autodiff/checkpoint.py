"""Binary tensor archives: header line, JSON manifest, flat little-endian float64 payload.

Layout::

    b"QSCL-CKPT-1\\n"
    uint64 LE   manifest length in bytes
    manifest    UTF-8 JSON {"format", "tensors": [{"name", "shape", "offset"}], "meta"}
    payload     concatenated '<f8' values; offsets are byte offsets into the payload
"""

from __future__ import annotations

import json
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = "QSCL-CKPT-1"


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"format": MAGIC, "tensors": entries, "meta": dict(meta or {})}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC.encode("ascii") + b"\n", struct.pack("<Q", len(blob)), blob, *chunks])


def loads(raw: bytes) -> tuple[dict[str, np.ndarray], dict]:
    head = MAGIC.encode("ascii") + b"\n"
    if not raw.startswith(head):
        raise CheckpointError(f"not a {MAGIC} archive")
    pos = len(head)
    try:
        (size,) = struct.unpack_from("<Q", raw, pos)
        manifest = json.loads(raw[pos + 8: pos + 8 + size].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    payload = memoryview(raw)[pos + 8 + size:]
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start + 8 * count > len(payload):
            raise CheckpointError(f"payload truncated at tensor {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(payload[start: start + 8 * count], dtype="<f8").reshape(shape).copy()
    return arrays, manifest.get("meta", {})


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays, meta))


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())
