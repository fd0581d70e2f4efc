"""Flat binary weight files.

Layout (little-endian)::

    b"OCWT" | u32 record_count | record*
    record := u16 name_len | name (utf-8) | u32 shape[4] | f64 payload[prod(shape)]

Parameters with fewer than four dimensions are left-padded with ones.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"OCWT"


class CheckpointError(ValueError):
    pass


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim > 4:
            raise CheckpointError(f"{name}: more than four dimensions")
        shape = (1,) * (4 - arr.ndim) + arr.shape
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<4I", *shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a weight file (bad magic)")
    pos = 4
    try:
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            shape = struct.unpack_from("<4I", blob, pos)
            pos += 16
            size = int(np.prod(shape))
            end = pos + 8 * size
            if end > len(blob):
                raise CheckpointError(f"truncated payload for {name}")
            params[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated weight file: {exc}") from None
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last record")
    return params


def save(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
