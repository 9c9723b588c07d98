"""The confined data region an instrumented program runs in.

A sandbox is a power-of-two sized, size-aligned block of (simulated) host
memory split into a context area, a stack and a bump-allocated heap.  Every
memory access of an instrumented program is confined to it by

    masked = (address & (size - 1)) | base

The masks and all bookkeeping (heap cursor, mirror map, counters) live outside
the maskable range.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Any

from .errors import AllocationFailure, BadAlignment, BadSize, HeapExhausted

MASK64 = (1 << 64) - 1

DEFAULT_SIZE = 4096
MIN_SIZE = 64
RED_ZONE = 8
DEFAULT_PROPORTIONS = (0.25, 0.25, 0.5)
# kernel vmalloc-style address, aligned to 2**40
DEFAULT_BASE = 0xFFFF_C900_0000_0000
METADATA_GAP = 64
METADATA_LEN = 64


@dataclass(frozen=True)
class AddressMasks:
    and_mask: int
    or_mask: int


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def compute_masks(base: int, size: int) -> AddressMasks:
    if not _is_pow2(size) or size < MIN_SIZE:
        raise BadSize(f"sandbox size must be a power of two >= {MIN_SIZE}, got {size}")
    if not 0 <= base <= MASK64:
        raise BadAlignment(f"base {base:#x} is not a 64-bit address")
    if base & (size - 1):
        raise BadAlignment(f"base {base:#x} is not aligned to {size:#x}")
    return AddressMasks(and_mask=size - 1, or_mask=base)


def mask_address(masks: AddressMasks, address: int) -> int:
    return ((address & MASK64) & masks.and_mask) | masks.or_mask


@dataclass(frozen=True)
class Layout:
    context_offset: int
    context_len: int
    stack_offset: int
    stack_len: int
    heap_offset: int
    heap_len: int

    def regions(self) -> dict[str, tuple[int, int]]:
        return {
            "context": (self.context_offset, self.context_len),
            "stack": (self.stack_offset, self.stack_len),
            "heap": (self.heap_offset, self.heap_len),
        }


def _floor8(n: float) -> int:
    return int(n) & ~7


def make_layout(size: int, proportions=DEFAULT_PROPORTIONS) -> Layout:
    ctx_p, stack_p, heap_p = proportions
    if min(proportions) < 0 or ctx_p + stack_p + heap_p > 1 + 1e-12:
        raise BadSize(f"layout proportions {proportions} must be non-negative and sum to <= 1")
    ctx_len = _floor8(size * ctx_p)
    stack_len = _floor8(size * stack_p)
    heap_len = min(_floor8(size * heap_p), size - RED_ZONE - ctx_len - stack_len)
    if heap_len < 0:
        raise BadSize(f"layout {proportions} leaves no room for the red zone in {size} bytes")
    return Layout(0, ctx_len, ctx_len, stack_len, ctx_len + stack_len, heap_len)


class MirrorKind(str, enum.Enum):
    RINGBUF_RESERVATION = "ringbuf_reservation"
    MAP_VALUE = "map_value"
    CONTEXT_FIELD = "context_field"


class MirrorState(str, enum.Enum):
    RESERVED = "reserved"
    COMMITTED = "committed"
    DISCARDED = "discarded"
    LIVE = "live"


@dataclass
class MirrorEntry:
    kind: MirrorKind
    kernel_ref: Any
    length: int
    state: MirrorState

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("mirror entries cover at least one byte")

    def settle(self, new_state: MirrorState) -> None:
        """Move a ring-buffer reservation out of the reserved state."""
        if self.kind is not MirrorKind.RINGBUF_RESERVATION \
                or self.state is not MirrorState.RESERVED \
                or new_state not in (MirrorState.COMMITTED, MirrorState.DISCARDED):
            raise ValueError(f"illegal mirror transition {self.state} -> {new_state}")
        self.state = new_state


@dataclass
class ExecutedCounters:
    mask_executed: int = 0
    trampoline_executed: int = 0
    instructions_retired: int = 0


@dataclass(frozen=True)
class ConfinementEvent:
    instruction_index: int
    original_address: int
    masked_address: int


@dataclass
class SandboxMetadata:
    heap_cursor: int
    mirror_map: dict[int, MirrorEntry] = field(default_factory=dict)
    counters: ExecutedCounters = field(default_factory=ExecutedCounters)
    confinement_events: list[ConfinementEvent] = field(default_factory=list)


class Sandbox:
    """One confined data region plus its trusted metadata.

    ``memory`` is the sandbox-owned allocation: ``size`` maskable bytes
    followed by an 8-byte tail so that a full-width access at the highest
    masked address stays in owned memory.  The metadata block sits past that
    tail at ``metadata_address`` and is never reachable through the masks.
    """

    def __init__(self, base: int, size: int, layout: Layout):
        self.masks = compute_masks(base, size)
        self.base = base
        self.size = size
        self.layout = layout
        self.metadata_address = base + size + RED_ZONE + METADATA_GAP
        if self.metadata_address + METADATA_LEN > MASK64:
            raise BadAlignment(f"sandbox at {base:#x} leaves no room for its metadata")
        try:
            self.memory = bytearray(size + RED_ZONE)
            self.metadata_block = bytearray(METADATA_LEN)
        except MemoryError as exc:
            raise AllocationFailure(f"cannot allocate a {size}-byte sandbox") from exc
        struct.pack_into("<QQ", self.metadata_block, 0, self.masks.and_mask, self.masks.or_mask)
        self.metadata = SandboxMetadata(heap_cursor=layout.heap_offset)

    def __repr__(self):
        return f"Sandbox(base={self.base:#x}, size={self.size})"

    @property
    def end(self) -> int:
        return self.base + self.size

    @property
    def allocation_end(self) -> int:
        return self.base + len(self.memory)

    @property
    def context_base(self) -> int:
        return self.base + self.layout.context_offset

    @property
    def stack_top(self) -> int:
        return self.base + self.layout.stack_offset + self.layout.stack_len

    @property
    def heap_range(self) -> tuple[int, int]:
        start = self.base + self.layout.heap_offset
        return start, start + self.layout.heap_len

    def contains(self, address: int, length: int = 1) -> bool:
        return self.base <= address and address + length <= self.end

    def read(self, address: int, length: int) -> bytes:
        if not self.contains(address, length):
            raise ValueError(f"span {address:#x}+{length} is outside the sandbox")
        off = address - self.base
        return bytes(self.memory[off:off + length])

    def write(self, address: int, data: bytes) -> None:
        if not self.contains(address, len(data)):
            raise ValueError(f"span {address:#x}+{len(data)} is outside the sandbox")
        off = address - self.base
        self.memory[off:off + len(data)] = data

    def alloc_heap(self, length: int) -> int:
        return alloc_heap(self, length)

    def reset(self) -> None:
        reset(self)


def create_sandbox(size: int = DEFAULT_SIZE, proportions=DEFAULT_PROPORTIONS,
                   base: int | None = None) -> Sandbox:
    if not _is_pow2(size) or size < MIN_SIZE:
        raise BadSize(f"sandbox size must be a power of two >= {MIN_SIZE}, got {size}")
    layout = make_layout(size, proportions)
    return Sandbox(DEFAULT_BASE if base is None else base, size, layout)


def alloc_heap(sandbox: Sandbox, length: int) -> int:
    if length <= 0:
        raise ValueError("heap allocations must be at least one byte")
    meta = sandbox.metadata
    start = (meta.heap_cursor + 7) & ~7
    heap_end = sandbox.layout.heap_offset + sandbox.layout.heap_len
    if start + length > heap_end:
        raise HeapExhausted(f"{length} bytes requested, {max(0, heap_end - start)} left")
    meta.heap_cursor = start + length
    return sandbox.base + start


def reset(sandbox: Sandbox) -> None:
    sandbox.memory[:] = bytes(len(sandbox.memory))
    sandbox.metadata = SandboxMetadata(heap_cursor=sandbox.layout.heap_offset)
