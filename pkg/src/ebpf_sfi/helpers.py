"""Helper functions and kernel-object mirroring.

A sandboxed program never receives a pointer to a kernel object.  The
context it is invoked with is copied into the sandbox's context area; objects
handed out by helpers (ring-buffer reservations, map values) are copied onto
the sandbox heap, and the mapping from heap copy to kernel object is kept in
the sandbox metadata.  Copies are written back only through the helpers
(ring-buffer commit) or after the program exits without a trap (maps,
writable context fields).

Each helper has two implementations: the sandboxed one used behind the
trampoline, and a vanilla one used by raw mode that hands out kernel
addresses and trusts its arguments, the way an unsandboxed kernel would.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Optional

from .errors import (
    ContextTooLarge, HeapExhausted, InvalidReservation, UnknownHelper,
)
from .isa import ProgramType
from .memory import AddressSpace
from .sandbox import MirrorEntry, MirrorKind, MirrorState, Sandbox, alloc_heap

# kernel helper ids
BPF_MAP_LOOKUP_ELEM = 1
BPF_MAP_UPDATE_ELEM = 2
BPF_GET_CURRENT_TASK = 35
BPF_RINGBUF_RESERVE = 131
BPF_RINGBUF_SUBMIT = 132
BPF_RINGBUF_DISCARD = 133

EFAULT = 14
EINVAL = 22
E2BIG = 7

# opaque token, deliberately not an address
CURRENT_TASK_TOKEN = 0x5441_534B

KERNEL_BASE = 0xFFFF_8880_0000_0000
KERNEL_OBJECT_ALIGN = 0x1000


def _u64(value: int) -> int:
    return value & 0xFFFF_FFFF_FFFF_FFFF


def _neg(errno: int) -> int:
    return _u64(-errno)


# -- kernel objects ------------------------------------------------------------

class KernelRingBuffer:
    """Producer side of a BPF ring buffer.

    Samples carry an 8-byte header (length plus busy/discard bits) in
    ``storage``, as in the kernel.  ``records`` is what a consumer would read,
    in commit order.
    """

    HEADER = 8
    BUSY_BIT = 1 << 31
    DISCARD_BIT = 1 << 30

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("ring buffer capacity must be positive")
        self.capacity = capacity
        self.storage = bytearray(2 * capacity + 16 * self.HEADER)
        self.address: Optional[int] = None
        self.records: list[bytes] = []
        # storage offset of sample data -> sample length
        self.reservations: dict[int, int] = {}
        self._cursor = 0

    @property
    def used(self) -> int:
        return sum(self.reservations.values()) + sum(len(r) for r in self.records)

    def reserve(self, size: int) -> Optional[int]:
        if size <= 0 or self.used + size > self.capacity:
            return None
        if not self.reservations:
            self._cursor = 0
        chunk = self.HEADER + ((size + 7) & ~7)
        if self._cursor + chunk > len(self.storage):
            return None
        struct.pack_into("<II", self.storage, self._cursor, size | self.BUSY_BIT, 0)
        data = self._cursor + self.HEADER
        self._cursor += chunk
        self.reservations[data] = size
        return data

    def commit(self, data_offset: int, payload: Optional[bytes] = None) -> None:
        if data_offset not in self.reservations:
            raise InvalidReservation(f"no open reservation at ring offset {data_offset}")
        size = self.reservations.pop(data_offset)
        if payload is not None:
            self.storage[data_offset:data_offset + size] = payload[:size]
        struct.pack_into("<I", self.storage, data_offset - self.HEADER, size)
        self.records.append(bytes(self.storage[data_offset:data_offset + size]))

    def discard(self, data_offset: int) -> None:
        if data_offset not in self.reservations:
            raise InvalidReservation(f"no open reservation at ring offset {data_offset}")
        size = self.reservations.pop(data_offset)
        struct.pack_into("<I", self.storage, data_offset - self.HEADER, size | self.DISCARD_BIT)

    def consume(self) -> Optional[bytes]:
        return self.records.pop(0) if self.records else None

    def checkpoint(self):
        return (bytes(self.storage), list(self.records), dict(self.reservations), self._cursor)

    def restore(self, state) -> None:
        storage, records, reservations, cursor = state
        self.storage[:] = storage
        self.records = list(records)
        self.reservations = dict(reservations)
        self._cursor = cursor


class ArrayMap:
    def __init__(self, value_size: int, max_entries: int):
        if value_size <= 0 or max_entries <= 0:
            raise ValueError("array maps need positive value_size and max_entries")
        self.value_size = value_size
        self.max_entries = max_entries
        self.backing = bytearray(value_size * max_entries)
        self.address: Optional[int] = None

    def slot(self, key: int) -> slice:
        start = key * self.value_size
        return slice(start, start + self.value_size)

    def value(self, key: int) -> bytes:
        return bytes(self.backing[self.slot(key)])


@dataclass
class KernelRegion:
    """Arbitrary kernel memory, e.g. a canary standing in for a cred struct."""

    name: str
    data: bytearray
    address: Optional[int] = None


class Kernel:
    """The kernel objects a program can reach through helpers.

    Objects are numbered in one id space; programs pass the id in r1 where the
    kernel would pass a map pointer.  Every object gets a kernel address so
    that raw-mode runs can reach it the way a real exploit would.
    """

    def __init__(self, base: int = KERNEL_BASE):
        self.maps: dict[int, ArrayMap] = {}
        self.ringbufs: dict[int, KernelRingBuffer] = {}
        self.regions: dict[str, KernelRegion] = {}
        self._next_id = 0
        self._next_address = base

    def _place(self, length: int) -> int:
        address = self._next_address
        span = (length + KERNEL_OBJECT_ALIGN - 1) // KERNEL_OBJECT_ALIGN + 1
        self._next_address += span * KERNEL_OBJECT_ALIGN
        return address

    def add_map(self, amap: ArrayMap) -> int:
        amap.address = self._place(len(amap.backing))
        self.maps[self._next_id] = amap
        self._next_id += 1
        return self._next_id - 1

    def add_ringbuf(self, ring: KernelRingBuffer) -> int:
        ring.address = self._place(len(ring.storage))
        self.ringbufs[self._next_id] = ring
        self._next_id += 1
        return self._next_id - 1

    def add_region(self, name: str, data: bytes) -> KernelRegion:
        region = KernelRegion(name, bytearray(data), self._place(len(data)))
        self.regions[name] = region
        return region

    def map_into(self, space: AddressSpace) -> None:
        for oid, amap in self.maps.items():
            space.map(amap.address, amap.backing, f"map{oid}")
        for oid, ring in self.ringbufs.items():
            space.map(ring.address, ring.storage, f"ringbuf{oid}")
        for region in self.regions.values():
            space.map(region.address, region.data, region.name)

    def ringbuf_at(self, address: int) -> Optional[KernelRingBuffer]:
        for ring in self.ringbufs.values():
            if ring.address <= address < ring.address + len(ring.storage):
                return ring
        return None

    def snapshot(self) -> dict:
        """Byte-level image of every external object, for atomicity checks."""
        return {
            "maps": {k: bytes(m.backing) for k, m in self.maps.items()},
            "ringbufs": {k: (bytes(r.storage), tuple(r.records), tuple(sorted(r.reservations.items())))
                         for k, r in self.ringbufs.items()},
            "regions": {k: bytes(r.data) for k, r in self.regions.items()},
        }


# -- context mirroring ------------------------------------------------------------

SCALAR = "scalar"
REGION_ADDRESS = "region_address"


@dataclass(frozen=True)
class ContextField:
    name: str
    offset: int
    length: int
    writable: bool = False
    kind: str = SCALAR
    # region_address fields: which auxiliary region, its maximum length, and
    # whether the field points at the region's start or one past its end.
    # For these fields ``writable`` refers to the region's bytes; the pointer
    # value itself is never written back.
    region: Optional[str] = None
    region_len: int = 0
    anchor: str = "start"

    @property
    def region_name(self) -> str:
        return self.region or self.name


@dataclass(frozen=True)
class ContextDescriptor:
    total_len: int
    fields: tuple[ContextField, ...] = ()

    def __post_init__(self):
        spans = []
        for f in self.fields:
            if f.kind not in (SCALAR, REGION_ADDRESS):
                raise ValueError(f"field {f.name}: unknown kind {f.kind!r}")
            if f.offset < 0 or f.length <= 0 or f.offset + f.length > self.total_len:
                raise ValueError(f"field {f.name} lies outside the {self.total_len}-byte context")
            if f.kind == REGION_ADDRESS and f.length != 8:
                raise ValueError(f"field {f.name}: region addresses are 8 bytes wide")
            if f.anchor not in ("start", "end"):
                raise ValueError(f"field {f.name}: anchor must be 'start' or 'end'")
            spans.append((f.offset, f.offset + f.length, f.name))
        spans.sort()
        for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
            if start < end:
                raise ValueError(f"context fields {a} and {b} overlap")

    def region_fields(self) -> list[ContextField]:
        return [f for f in self.fields if f.kind == REGION_ADDRESS]

    def region_names(self) -> list[str]:
        names: list[str] = []
        for f in self.region_fields():
            if f.region_name not in names:
                names.append(f.region_name)
        return names

    def region_writable(self, name: str) -> bool:
        return any(f.writable for f in self.region_fields() if f.region_name == name)

    @classmethod
    def from_dict(cls, doc: dict) -> "ContextDescriptor":
        fields = tuple(
            ContextField(
                name=f["name"], offset=f["offset"], length=f["length"],
                writable=f.get("writable", False), kind=f.get("kind", SCALAR),
                region=f.get("region"), region_len=f.get("region_len", 0),
                anchor=f.get("anchor", "start"),
            )
            for f in doc.get("fields", [])
        )
        return cls(doc["total_len"], fields)

    @classmethod
    def load(cls, path) -> "ContextDescriptor":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = []
        for f in self.fields:
            d = {"name": f.name, "offset": f.offset, "length": f.length,
                 "writable": f.writable, "kind": f.kind}
            if f.kind == REGION_ADDRESS:
                d.update(region=f.region_name, region_len=f.region_len, anchor=f.anchor)
            out.append(d)
        return {"total_len": self.total_len, "fields": out}


XDP_CONTEXT = ContextDescriptor(24, (
    ContextField("data", 0, 8, writable=True, kind=REGION_ADDRESS, region="packet",
                 region_len=1500),
    ContextField("data_end", 8, 8, kind=REGION_ADDRESS, region="packet", region_len=1500,
                 anchor="end"),
    ContextField("ingress_ifindex", 16, 4),
    ContextField("rx_queue_index", 20, 4),
))

SOCKET_FILTER_CONTEXT = ContextDescriptor(32, (
    ContextField("len", 0, 4),
    ContextField("protocol", 4, 4),
    ContextField("mark", 8, 4, writable=True),
    ContextField("priority", 12, 4, writable=True),
    ContextField("data", 16, 8, kind=REGION_ADDRESS, region="packet", region_len=1500),
    ContextField("data_end", 24, 8, kind=REGION_ADDRESS, region="packet", region_len=1500,
                 anchor="end"),
))

DEFAULT_CONTEXTS = {
    ProgramType.XDP: XDP_CONTEXT,
    ProgramType.SOCKET_FILTER: SOCKET_FILTER_CONTEXT,
}


@dataclass
class ContextInput:
    """The kernel-side context object a program is invoked with."""

    descriptor: ContextDescriptor
    data: bytearray
    regions: dict[str, bytearray] = field(default_factory=dict)

    @classmethod
    def for_packet(cls, program_type, packet: bytes, **scalars) -> "ContextInput":
        descriptor = DEFAULT_CONTEXTS[ProgramType(program_type)]
        data = bytearray(descriptor.total_len)
        by_name = {f.name: f for f in descriptor.fields}
        if "len" in by_name and "len" not in scalars:
            scalars["len"] = len(packet)
        for name, value in scalars.items():
            f = by_name[name]
            data[f.offset:f.offset + f.length] = value.to_bytes(f.length, "little")
        return cls(descriptor, data, {"packet": bytearray(packet)})

    @classmethod
    def empty(cls) -> "ContextInput":
        return cls(ContextDescriptor(0), bytearray())


def _region_placement(sandbox: Sandbox, descriptor: ContextDescriptor,
                      regions: dict[str, bytes]) -> dict[str, int]:
    """Sandbox address of each auxiliary region, packed after the context."""
    layout = sandbox.layout
    cursor = descriptor.total_len
    placement = {}
    for name in descriptor.region_names():
        cursor = (cursor + 7) & ~7
        placement[name] = sandbox.base + layout.context_offset + cursor
        cursor += len(regions.get(name, b""))
    if cursor > layout.context_len:
        raise ContextTooLarge(f"context needs {cursor} bytes, context area holds "
                              f"{layout.context_len}")
    return placement


def mirror_context(sandbox: Sandbox, descriptor: ContextDescriptor, context_bytes: bytes,
                   regions: Optional[dict[str, bytes]] = None) -> int:
    regions = regions or {}
    if len(context_bytes) != descriptor.total_len:
        raise ValueError(f"context is {len(context_bytes)} bytes, descriptor says "
                         f"{descriptor.total_len}")
    for f in descriptor.region_fields():
        if f.region_len and len(regions.get(f.region_name, b"")) > f.region_len:
            raise ContextTooLarge(f"region {f.region_name} exceeds {f.region_len} bytes")
    placement = _region_placement(sandbox, descriptor, regions)
    base = sandbox.context_base
    if not descriptor.total_len:
        return base
    mirror = bytearray(context_bytes)
    for f in descriptor.region_fields():
        address = placement[f.region_name]
        if f.anchor == "end":
            address += len(regions.get(f.region_name, b""))
        mirror[f.offset:f.offset + 8] = address.to_bytes(8, "little")
    sandbox.write(base, bytes(mirror))
    meta = sandbox.metadata.mirror_map
    meta[base] = MirrorEntry(MirrorKind.CONTEXT_FIELD, "context", descriptor.total_len,
                             MirrorState.LIVE)
    for name, address in placement.items():
        data = regions.get(name, b"")
        if data:
            sandbox.write(address, bytes(data))
            meta[address] = MirrorEntry(MirrorKind.CONTEXT_FIELD, name, len(data),
                                        MirrorState.LIVE)
    return base


def sync_context(sandbox: Sandbox, descriptor: ContextDescriptor, context_bytes: bytes,
                 regions: Optional[dict[str, bytes]] = None) -> tuple[bytes, dict[str, bytes]]:
    """Copy writable fields and regions back; everything else stays as given."""
    regions = regions or {}
    placement = _region_placement(sandbox, descriptor, regions)
    base = sandbox.context_base
    out = bytearray(context_bytes)
    for f in descriptor.fields:
        if f.kind == SCALAR and f.writable:
            out[f.offset:f.offset + f.length] = sandbox.read(base + f.offset, f.length)
    new_regions = {}
    for name, data in regions.items():
        if name in placement and descriptor.region_writable(name) and data:
            new_regions[name] = sandbox.read(placement[name], len(data))
        else:
            new_regions[name] = bytes(data)
    return bytes(out), new_regions


# -- ring buffer and map mirrors ----------------------------------------------------

def ringbuf_reserve(sandbox: Sandbox, ringbuf: KernelRingBuffer, size: int) -> int:
    if size <= 0 or size > sandbox.layout.heap_len:
        return 0
    _, heap_end = sandbox.heap_range
    # check heap room first so a failed reserve leaves no kernel reservation behind
    if sandbox.base + ((sandbox.metadata.heap_cursor + 7) & ~7) + size > heap_end:
        return 0
    handle = ringbuf.reserve(size)
    if handle is None:
        return 0
    address = alloc_heap(sandbox, size)
    sandbox.metadata.mirror_map[address] = MirrorEntry(
        MirrorKind.RINGBUF_RESERVATION, (ringbuf, handle), size, MirrorState.RESERVED)
    return address


def _reservation(sandbox: Sandbox, ringbuf: Optional[KernelRingBuffer], address: int):
    entry = sandbox.metadata.mirror_map.get(address)
    if entry is None or entry.kind is not MirrorKind.RINGBUF_RESERVATION:
        raise InvalidReservation(f"{address:#x} is not a ring buffer reservation")
    if entry.state is not MirrorState.RESERVED:
        raise InvalidReservation(f"reservation at {address:#x} is already {entry.state.value}")
    owner, handle = entry.kernel_ref
    if ringbuf is not None and owner is not ringbuf:
        raise InvalidReservation(f"reservation at {address:#x} belongs to another ring buffer")
    return entry, owner, handle


def ringbuf_commit(sandbox: Sandbox, ringbuf: Optional[KernelRingBuffer], address: int) -> None:
    entry, owner, handle = _reservation(sandbox, ringbuf, address)
    owner.commit(handle, sandbox.read(address, entry.length))
    entry.settle(MirrorState.COMMITTED)


def ringbuf_discard(sandbox: Sandbox, ringbuf: Optional[KernelRingBuffer], address: int) -> None:
    entry, owner, handle = _reservation(sandbox, ringbuf, address)
    owner.discard(handle)
    entry.settle(MirrorState.DISCARDED)


def release_open_reservations(sandbox: Sandbox) -> int:
    """Discard reservations a program left open at exit; returns how many."""
    count = 0
    for address, entry in sandbox.metadata.mirror_map.items():
        if entry.kind is MirrorKind.RINGBUF_RESERVATION and entry.state is MirrorState.RESERVED:
            ringbuf_discard(sandbox, None, address)
            count += 1
    return count


def map_lookup(sandbox: Sandbox, amap: ArrayMap, key: int) -> int:
    if not 0 <= key < amap.max_entries:
        return 0
    try:
        address = alloc_heap(sandbox, amap.value_size)
    except HeapExhausted:
        return 0
    sandbox.write(address, amap.value(key))
    sandbox.metadata.mirror_map[address] = MirrorEntry(
        MirrorKind.MAP_VALUE, (amap, key), amap.value_size, MirrorState.LIVE)
    return address


def map_update(sandbox: Sandbox, amap: ArrayMap, key: int, value: bytes) -> int:
    """Stage a whole-value update; it reaches the map at the next map_sync."""
    if not 0 <= key < amap.max_entries:
        return _neg(E2BIG)
    try:
        address = alloc_heap(sandbox, amap.value_size)
    except HeapExhausted:
        return _neg(E2BIG)
    sandbox.write(address, value[:amap.value_size])
    sandbox.metadata.mirror_map[address] = MirrorEntry(
        MirrorKind.MAP_VALUE, (amap, key), amap.value_size, MirrorState.LIVE)
    return 0


def map_sync(sandbox: Sandbox, amap: Optional[ArrayMap] = None) -> None:
    for address, entry in sandbox.metadata.mirror_map.items():
        if entry.kind is not MirrorKind.MAP_VALUE or entry.state is not MirrorState.LIVE:
            continue
        owner, key = entry.kernel_ref
        if amap is None or owner is amap:
            owner.backing[owner.slot(key)] = sandbox.read(address, entry.length)


# -- helper implementations ------------------------------------------------------

@dataclass
class HelperEnv:
    """What a helper can touch during one execution."""

    sandbox: Sandbox
    kernel: Kernel
    memory: AddressSpace


def _sandbox_bytes(env: HelperEnv, address: int, length: int) -> Optional[bytes]:
    if not env.sandbox.contains(address, length):
        return None
    return env.sandbox.read(address, length)


def _map_lookup_sandboxed(env, map_id, key_ptr, *_):
    amap = env.kernel.maps.get(map_id)
    key = _sandbox_bytes(env, key_ptr, 4)
    if amap is None or key is None:
        return 0
    return map_lookup(env.sandbox, amap, int.from_bytes(key, "little"))


def _map_update_sandboxed(env, map_id, key_ptr, value_ptr, *_):
    amap = env.kernel.maps.get(map_id)
    if amap is None:
        return _neg(EINVAL)
    key = _sandbox_bytes(env, key_ptr, 4)
    value = _sandbox_bytes(env, value_ptr, amap.value_size)
    if key is None or value is None:
        return _neg(EFAULT)
    return map_update(env.sandbox, amap, int.from_bytes(key, "little"), value)


def _get_current_task(env, *_):
    return CURRENT_TASK_TOKEN


def _ringbuf_reserve_sandboxed(env, ring_id, size, *_):
    ring = env.kernel.ringbufs.get(ring_id)
    if ring is None:
        return 0
    return ringbuf_reserve(env.sandbox, ring, size)


def _ringbuf_submit_sandboxed(env, address, *_):
    ringbuf_commit(env.sandbox, None, address)
    return 0


def _ringbuf_discard_sandboxed(env, address, *_):
    ringbuf_discard(env.sandbox, None, address)
    return 0


# vanilla versions: kernel pointers out, arguments trusted

def _map_lookup_raw(env, map_id, key_ptr, *_):
    amap = env.kernel.maps.get(map_id)
    if amap is None:
        return 0
    key = env.memory.load(key_ptr, 4)
    if key >= amap.max_entries:
        return 0
    return amap.address + key * amap.value_size


def _map_update_raw(env, map_id, key_ptr, value_ptr, *_):
    amap = env.kernel.maps.get(map_id)
    if amap is None:
        return _neg(EINVAL)
    key = env.memory.load(key_ptr, 4)
    if key >= amap.max_entries:
        return _neg(E2BIG)
    amap.backing[amap.slot(key)] = env.memory.read(value_ptr, amap.value_size)
    return 0


def _ringbuf_reserve_raw(env, ring_id, size, *_):
    ring = env.kernel.ringbufs.get(ring_id)
    if ring is None:
        return 0
    handle = ring.reserve(size)
    return 0 if handle is None else ring.address + handle


def _ringbuf_settle_raw(env, address, discard):
    # the header is located from the sample pointer without validating it
    header = _u64(address - KernelRingBuffer.HEADER)
    length = env.memory.load(header, 4)
    flipped = length ^ KernelRingBuffer.BUSY_BIT
    if discard:
        flipped |= KernelRingBuffer.DISCARD_BIT
    env.memory.store(header, 4, flipped)
    ring = env.kernel.ringbuf_at(address)
    if ring is not None and address - ring.address in ring.reservations:
        handle = address - ring.address
        if discard:
            ring.discard(handle)
        else:
            ring.commit(handle)
    return 0


def _ringbuf_submit_raw(env, address, *_):
    return _ringbuf_settle_raw(env, address, discard=False)


def _ringbuf_discard_raw(env, address, *_):
    return _ringbuf_settle_raw(env, address, discard=True)


HelperFn = Callable[..., int]


@dataclass(frozen=True)
class Helper:
    helper_id: int
    name: str
    nargs: int
    sandboxed: HelperFn
    raw: HelperFn


class HelperRegistry:
    """helper id -> Helper; frozen before any capability table is built."""

    def __init__(self, helpers=()):
        self._helpers: dict[int, Helper] = {}
        self._frozen = False
        for helper in helpers:
            self.register(helper)

    def register(self, helper: Helper) -> None:
        if self._frozen:
            raise RuntimeError("helper registry is frozen")
        if helper.helper_id in self._helpers:
            raise ValueError(f"helper id {helper.helper_id} registered twice")
        self._helpers[helper.helper_id] = helper

    def freeze(self) -> "HelperRegistry":
        self._frozen = True
        self._helpers = MappingProxyType(dict(self._helpers))
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __contains__(self, helper_id) -> bool:
        return helper_id in self._helpers

    def __getitem__(self, helper_id) -> Helper:
        try:
            return self._helpers[helper_id]
        except KeyError:
            raise UnknownHelper(f"no helper with id {helper_id}") from None

    def get(self, helper_id) -> Optional[Helper]:
        return self._helpers.get(helper_id)

    def ids(self) -> list[int]:
        return sorted(self._helpers)

    def __iter__(self):
        return iter(self._helpers.values())


def default_helpers() -> list[Helper]:
    return [
        Helper(BPF_MAP_LOOKUP_ELEM, "map_lookup_elem", 2, _map_lookup_sandboxed, _map_lookup_raw),
        Helper(BPF_MAP_UPDATE_ELEM, "map_update_elem", 4, _map_update_sandboxed, _map_update_raw),
        Helper(BPF_GET_CURRENT_TASK, "get_current_task", 0, _get_current_task, _get_current_task),
        Helper(BPF_RINGBUF_RESERVE, "ringbuf_reserve", 3, _ringbuf_reserve_sandboxed,
               _ringbuf_reserve_raw),
        Helper(BPF_RINGBUF_SUBMIT, "ringbuf_submit", 2, _ringbuf_submit_sandboxed,
               _ringbuf_submit_raw),
        Helper(BPF_RINGBUF_DISCARD, "ringbuf_discard", 2, _ringbuf_discard_sandboxed,
               _ringbuf_discard_raw),
    ]


DEFAULT_REGISTRY = HelperRegistry(default_helpers()).freeze()


STATS_MAP_ID = 0
EVENTS_RINGBUF_ID = 1


def standard_kernel(ring_capacity: int = 4096) -> Kernel:
    """Kernel objects the bundled samples expect: map 0 (16 x u64), ring buffer 1."""
    kernel = Kernel()
    kernel.add_map(ArrayMap(value_size=8, max_entries=16))
    kernel.add_ringbuf(KernelRingBuffer(ring_capacity))
    return kernel
