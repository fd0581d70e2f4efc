"""The ``.ocmc`` compressed-image container.

All integers little-endian::

    magic    4s   b"OCMC"
    version  u8   1
    width    u32  true (unpadded) width
    height   u32  true (unpadded) height
    scheme   u8   hyper stride scheme (1 or 2)
    N        u16  filter count of the model
    6 x {v_min i32, v_max i32, length u32}
    stream bytes in order zH, zL, y1L, y1H, yL, yH
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .model import LOW_STREAMS, STREAMS

MAGIC = b"OCMC"
VERSION = 1
_HEAD = struct.Struct("<4sBIIBH")
_DESC = struct.Struct("<iiI")
HEADER_SIZE = _HEAD.size + len(STREAMS) * _DESC.size


class ContainerError(ValueError):
    pass


@dataclass
class Stream:
    v_min: int
    v_max: int
    data: bytes

    def __post_init__(self):
        if self.v_max < self.v_min:
            raise ContainerError(f"empty symbol range [{self.v_min}, {self.v_max}]")


@dataclass
class Container:
    width: int
    height: int
    scheme: int
    N: int
    streams: dict[str, Stream] = field(default_factory=dict)

    def serialize(self) -> bytes:
        if set(self.streams) != set(STREAMS):
            raise ContainerError(f"container needs streams {STREAMS}, has {sorted(self.streams)}")
        parts = [_HEAD.pack(MAGIC, VERSION, self.width, self.height, self.scheme, self.N)]
        for name in STREAMS:
            s = self.streams[name]
            parts.append(_DESC.pack(s.v_min, s.v_max, len(s.data)))
        parts.extend(self.streams[name].data for name in STREAMS)
        return b"".join(parts)

    @classmethod
    def parse(cls, blob: bytes) -> "Container":
        if len(blob) < 4 or blob[:4] != MAGIC:
            raise ContainerError("not an OCMC container (bad magic)")
        if len(blob) < HEADER_SIZE:
            raise ContainerError(f"truncated header: {len(blob)} of {HEADER_SIZE} bytes")
        _, version, width, height, scheme, n = _HEAD.unpack_from(blob, 0)
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        if width < 1 or height < 1:
            raise ContainerError("zero image dimension in header")
        descs = [_DESC.unpack_from(blob, _HEAD.size + i * _DESC.size) for i in range(len(STREAMS))]
        expected = HEADER_SIZE + sum(d[2] for d in descs)
        if len(blob) != expected:
            kind = "truncated" if len(blob) < expected else "oversized"
            raise ContainerError(f"{kind} container: {len(blob)} bytes, header declares {expected}")
        streams = {}
        pos = HEADER_SIZE
        for name, (v_min, v_max, length) in zip(STREAMS, descs):
            streams[name] = Stream(v_min, v_max, blob[pos : pos + length])
            pos += length
        return cls(width, height, scheme, n, streams)

    @property
    def total_bits(self) -> int:
        return 8 * (HEADER_SIZE + sum(len(s.data) for s in self.streams.values()))

    def stream_bits(self, name: str) -> int:
        return 8 * len(self.streams[name].data)

    def bit_allocation(self) -> dict[str, float]:
        pixels = self.width * self.height
        low = sum(self.stream_bits(s) for s in LOW_STREAMS) / pixels
        high = sum(self.stream_bits(s) for s in STREAMS if s not in LOW_STREAMS) / pixels
        return {"bpp_total": self.total_bits / pixels, "bpp_L": low, "bpp_H": high}
