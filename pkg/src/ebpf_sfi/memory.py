"""Simulated host address space.

The interpreter resolves every load and store against a set of mapped
regions: the sandbox allocation, its metadata block, and whatever kernel
objects (maps, ring buffers, canaries) exist.  Masking is what keeps an
instrumented program inside the sandbox; this layer only models the memory
the program could otherwise reach.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .errors import MemoryFault


@dataclass
class Region:
    start: int
    buf: bytearray
    name: str

    @property
    def end(self) -> int:
        return self.start + len(self.buf)


class AddressSpace:
    def __init__(self):
        self._starts: list[int] = []
        self._regions: list[Region] = []
        self._last: Region | None = None

    def map(self, start: int, buf: bytearray, name: str) -> Region:
        region = Region(start, buf, name)
        i = bisect.bisect_left(self._starts, start)
        prev = self._regions[i - 1] if i else None
        nxt = self._regions[i] if i < len(self._regions) else None
        if (prev and prev.end > start) or (nxt and nxt.start < region.end):
            raise ValueError(f"region {name} at {start:#x} overlaps an existing mapping")
        self._starts.insert(i, start)
        self._regions.insert(i, region)
        return region

    def regions(self) -> list[Region]:
        return list(self._regions)

    def find(self, address: int, size: int) -> tuple[Region, int]:
        region = self._last
        if region is None or not region.start <= address or address + size > region.end:
            i = bisect.bisect_right(self._starts, address) - 1
            if i < 0:
                raise MemoryFault(f"unmapped access at {address:#x}")
            region = self._regions[i]
            if address + size > region.end:
                raise MemoryFault(f"unmapped access at {address:#x} (+{size})")
            self._last = region
        return region, address - region.start

    def load(self, address: int, size: int) -> int:
        region, off = self.find(address, size)
        return int.from_bytes(region.buf[off:off + size], "little")

    def store(self, address: int, size: int, value: int) -> None:
        region, off = self.find(address, size)
        region.buf[off:off + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")

    def read(self, address: int, length: int) -> bytes:
        if length == 0:
            return b""
        region, off = self.find(address, length)
        return bytes(region.buf[off:off + length])

    def write(self, address: int, data: bytes) -> None:
        if not data:
            return
        region, off = self.find(address, len(data))
        region.buf[off:off + len(data)] = data
