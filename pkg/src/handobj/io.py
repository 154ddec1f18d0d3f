"""Binary tensor files (``.tns``), multi-tensor containers and ASCII PLY.

``.tns`` layout::

    b"TNS1" | dtype code (u8) | rank (u8) | rank x u64 LE dims | LE row-major payload

dtype codes: 0 = float32, 1 = float64, 2 = int32.

A container (checkpoints, the hand template) is::

    b"TNSC" | version (u32 LE) | header length (u64 LE) | JSON header | .tns blocks

The header lists every block as ``{"name": ..., "nbytes": ...}`` in file order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

TNS_MAGIC = b"TNS1"
CONTAINER_MAGIC = b"TNSC"
CONTAINER_VERSION = 1

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int32): 2}


class TensorFormatError(ValueError):
    pass


def tns_bytes(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; use float32, float64 or int32")
    if arr.ndim > 255:
        raise TensorFormatError(f"rank {arr.ndim} does not fit in one byte")
    code = _DTYPE_TO_CODE[arr.dtype]
    head = TNS_MAGIC + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return head + payload


def tns_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; returns the array and the end offset."""
    if buf[offset:offset + 4] != TNS_MAGIC:
        raise TensorFormatError(f"bad magic at byte {offset}: {buf[offset:offset + 4]!r}")
    if len(buf) < offset + 6:
        raise TensorFormatError("truncated tensor header")
    code, rank = struct.unpack_from("<BB", buf, offset + 4)
    if code not in _CODE_TO_DTYPE:
        raise TensorFormatError(f"unknown dtype code {code}")
    pos = offset + 6
    if len(buf) < pos + 8 * rank:
        raise TensorFormatError("truncated tensor dims")
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = _CODE_TO_DTYPE[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise TensorFormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
    return arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def save_tns(path, array) -> None:
    Path(path).write_bytes(tns_bytes(array))


def load_tns(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing tensor file: {path}")
    return tns_from_bytes(path.read_bytes())[0]


def container_bytes(header: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> bytes:
    blocks = [(name, tns_bytes(arr)) for name, arr in tensors.items()]
    full = dict(header)
    full["tensors"] = [{"name": name, "nbytes": len(blob)} for name, blob in blocks]
    text = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [CONTAINER_MAGIC, struct.pack("<IQ", CONTAINER_VERSION, len(text)), text]
    out.extend(blob for _, blob in blocks)
    return b"".join(out)


def container_from_bytes(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if buf[:4] != CONTAINER_MAGIC:
        raise TensorFormatError(f"not a tensor container (magic {buf[:4]!r})")
    version, hlen = struct.unpack_from("<IQ", buf, 4)
    if version != CONTAINER_VERSION:
        raise TensorFormatError(f"unsupported container version {version}")
    pos = 16
    header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = {}
    for entry in header.pop("tensors"):
        arr, end = tns_from_bytes(buf, pos)
        if end - pos != entry["nbytes"]:
            raise TensorFormatError(f"block {entry['name']!r} size mismatch")
        tensors[entry["name"]] = arr
        pos = end
    if pos != len(buf):
        raise TensorFormatError(f"{len(buf) - pos} trailing bytes after last block")
    return header, tensors


def save_container(path, header, tensors) -> None:
    Path(path).write_bytes(container_bytes(header, tensors))


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    return container_from_bytes(Path(path).read_bytes())


def write_ply(path, points) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    lines.extend(f"{x:.6g} {y:.6g} {z:.6g}" for x, y, z in pts)
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise TensorFormatError(f"{path}: not a PLY file")
    n = None
    for i, line in enumerate(text):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif line.strip() == "end_header":
            body = text[i + 1:i + 1 + (n or 0)]
            break
    else:
        raise TensorFormatError(f"{path}: missing end_header")
    if n is None or len(body) != n:
        raise TensorFormatError(f"{path}: expected {n} vertices, found {len(body)}")
    return np.array([[float(v) for v in row.split()[:3]] for row in body], dtype=np.float64).reshape(n, 3)
