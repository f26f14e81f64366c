"""Versioned binary container: magic, format version, JSON header, raw arrays.

Layout::

    8 bytes   magic b"CELLETA\\0"
    u32 LE    format version
    u64 LE    header length
    header    UTF-8 JSON (sorted keys) with "kind", "meta", "arrays", "sha256"
    payload   arrays back to back, little-endian

The header's ``sha256`` covers the payload.  Output is byte-for-byte
deterministic for equal inputs.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFile

MAGIC = b"CELLETA\0"
FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "|u1"}


def _code(arr: np.ndarray) -> str:
    if arr.dtype == np.bool_ or arr.dtype == np.uint8:
        return "u1"
    if np.issubdtype(arr.dtype, np.integer):
        return "i8"
    return "f8"


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "bool": bool(arr.dtype == np.bool_), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"kind": kind, "meta": meta, "arrays": entries,
              "sha256": hashlib.sha256(payload).hexdigest()}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + payload


def loads(blob: bytes, kind: str | None = None):
    """Parse a container; returns ``(meta, arrays)``."""
    if blob[:8] != MAGIC:
        raise CorruptFile("not a container (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise CorruptFile(f"unsupported container version {version}")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable header: {exc}") from None
    if kind is not None and header["kind"] != kind:
        raise CorruptFile(f"expected a {kind!r} container, found {header['kind']!r}")
    payload = blob[20 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CorruptFile("checksum mismatch")
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
        arrays[e["name"]] = arr.astype(bool) if e["bool"] else arr
    return header["meta"], arrays


def save(path, kind: str, meta: dict, arrays: dict) -> None:
    Path(path).write_bytes(dumps(kind, meta, arrays))


def load(path, kind: str | None = None):
    return loads(Path(path).read_bytes(), kind)
