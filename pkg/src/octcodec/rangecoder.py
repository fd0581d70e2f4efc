"""Carry-less 32-bit range coder (Subbotin style) over 16-bit frequency tables.

The encoder keeps ``low`` and ``range`` in 32 bits and emits the top byte
whenever it is settled, or forces ``range`` down when it underflows below
2**16. Four bytes flush the final state. The decoder mirrors every step and
therefore consumes exactly the bytes the encoder produced.
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

from .entropy import PRECISION_BITS, QuantizedCdf

TOP = 1 << 24
BOT = 1 << 16
MASK = (1 << 32) - 1


class RangeCoderError(ValueError):
    pass


def _table_index(n: int, tables: QuantizedCdf, index) -> np.ndarray:
    if index is None:
        if tables.cdf.shape[0] == 1:
            return np.zeros(n, dtype=np.int64)
        if tables.cdf.shape[0] != n:
            raise RangeCoderError(f"{tables.cdf.shape[0]} tables for {n} symbols and no index given")
        return np.arange(n)
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if len(index) != n:
        raise RangeCoderError(f"table index has {len(index)} entries for {n} symbols")
    if n and (index.min() < 0 or index.max() >= tables.cdf.shape[0]):
        raise RangeCoderError("table index out of range")
    return index


def rc_encode(symbols, tables: QuantizedCdf, index=None) -> bytes:
    """Encode integer ``symbols``; symbol i uses row ``index[i]`` of ``tables``."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    idx = _table_index(len(sym), tables, index)
    if len(sym) and (sym.min() < tables.v_min or sym.max() > tables.v_max):
        raise RangeCoderError(
            f"symbol outside table range [{tables.v_min}, {tables.v_max}]: min {sym.min()}, max {sym.max()}"
        )
    col = sym - tables.v_min
    starts = tables.cdf[idx, col].tolist()
    freqs = (tables.cdf[idx, col + 1] - tables.cdf[idx, col]).tolist()

    out = bytearray()
    low, rng = 0, MASK
    shift = PRECISION_BITS
    for start, freq in zip(starts, freqs):
        r = rng >> shift
        low += start * r
        rng = freq * r
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = -low & (BOT - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
    for _ in range(4):
        out.append((low >> 24) & 0xFF)
        low = (low << 8) & MASK
    return bytes(out)


def rc_decode(data: bytes, tables: QuantizedCdf, count: int, index=None) -> np.ndarray:
    """Decode ``count`` symbols; raises RangeCoderError on truncated or inconsistent data."""
    idx = _table_index(count, tables, index)
    if len(data) < 4:
        raise RangeCoderError("stream shorter than the 4-byte flush")
    cdf_rows = tables.cdf.tolist()
    shift = PRECISION_BITS
    total = 1 << shift
    buf = data
    n = len(buf)
    code = int.from_bytes(buf[:4], "big")
    p = 4
    low, rng = 0, MASK
    out = [0] * count
    for i, row_i in enumerate(idx.tolist()):
        row = cdf_rows[row_i]
        r = rng >> shift
        target = ((code - low) & MASK) // r
        if target >= total:
            raise RangeCoderError(f"corrupt stream at symbol {i}")
        s = bisect_right(row, target) - 1
        start = row[s]
        low = (low + start * r) & MASK
        rng = (row[s + 1] - start) * r
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = -low & (BOT - 1)
            else:
                break
            if p >= n:
                raise RangeCoderError(f"stream truncated after {i} of {count} symbols")
            code = ((code << 8) | buf[p]) & MASK
            p += 1
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
        out[i] = s
    if p != n:
        raise RangeCoderError(f"{n - p} unread bytes after {count} symbols")
    return np.asarray(out, dtype=np.int64) + tables.v_min


class RangeDecoder:
    """Incremental decoder: one :meth:`decode` call per symbol with its own table row.

    Produces exactly the same symbols as :func:`rc_decode`; used where the
    table of each symbol is only formed when that symbol is reached.
    """

    def __init__(self, data: bytes):
        if len(data) < 4:
            raise RangeCoderError("stream shorter than the 4-byte flush")
        self._buf = data
        self._pos = 4
        self._code = int.from_bytes(data[:4], "big")
        self._low = 0
        self._range = MASK
        self.count = 0

    def decode(self, cdf_row) -> int:
        """Return the column index of the decoded symbol in ``cdf_row``."""
        r = self._range >> PRECISION_BITS
        target = ((self._code - self._low) & MASK) // r
        if target >= 1 << PRECISION_BITS:
            raise RangeCoderError(f"corrupt stream at symbol {self.count}")
        s = bisect_right(cdf_row, target) - 1
        start = cdf_row[s]
        low = (self._low + start * r) & MASK
        rng = (cdf_row[s + 1] - start) * r
        code, pos, buf = self._code, self._pos, self._buf
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = -low & (BOT - 1)
            else:
                break
            if pos >= len(buf):
                raise RangeCoderError(f"stream truncated after {self.count} symbols")
            code = ((code << 8) | buf[pos]) & MASK
            pos += 1
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
        self._low, self._range, self._code, self._pos = low, rng, code, pos
        self.count += 1
        return s

    def finish(self) -> None:
        if self._pos != len(self._buf):
            raise RangeCoderError(f"{len(self._buf) - self._pos} unread bytes after {self.count} symbols")
