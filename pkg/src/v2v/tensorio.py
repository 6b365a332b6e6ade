"""Flat little-endian float32 tensor files.

Layout::

    b"V2VT"            magic
    uint32 LE          format version (1)
    uint32 LE          header length in bytes
    header             UTF-8 JSON: {"kind", "meta", "tensors": [{"name", "shape"}, ...]}
    payload            each tensor as row-major float32 LE, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"V2VT"
VERSION = 1


def write_tensors(path: str | Path, tensors: list[tuple[str, np.ndarray]], meta: dict | None = None,
                  kind: str = "tensors") -> int:
    header = {
        "kind": kind,
        "meta": meta or {},
        "tensors": [{"name": name, "shape": list(np.shape(arr))} for name, arr in tensors],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    chunks += [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in tensors]
    data = b"".join(chunks)
    Path(path).write_bytes(data)
    return len(data)


def read_tensors(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (header, name -> float32 array) preserving file order."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a tensor file (bad magic {data[:4]!r})")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported tensor format version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    out = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(t["shape"])
        out[t["name"]] = arr.copy()
        offset += 4 * n
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return header, out
