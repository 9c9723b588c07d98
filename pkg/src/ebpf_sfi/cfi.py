"""Capability tables and the call trampoline.

Each program type is allowed a fixed set of helpers.  The allowlist is
computed once, stored in a hash set keyed by ``(program_type, helper_id)``,
and consulted by :func:`dispatch` on every guarded call before the helper
runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import CfiViolation, UnknownHelper
from .helpers import (
    BPF_GET_CURRENT_TASK, BPF_MAP_LOOKUP_ELEM, BPF_MAP_UPDATE_ELEM, BPF_RINGBUF_DISCARD,
    BPF_RINGBUF_RESERVE, BPF_RINGBUF_SUBMIT, DEFAULT_REGISTRY, HelperEnv, HelperRegistry,
)
from .isa import ProgramType

_RING_AND_MAP = {
    BPF_MAP_LOOKUP_ELEM, BPF_MAP_UPDATE_ELEM,
    BPF_RINGBUF_RESERVE, BPF_RINGBUF_SUBMIT, BPF_RINGBUF_DISCARD,
}

# Placeholder matrix: which helpers each type may call is a policy choice.
DEFAULT_POLICY: dict[str, frozenset[int]] = {
    ProgramType.XDP.value: frozenset(_RING_AND_MAP),
    ProgramType.SOCKET_FILTER.value: frozenset(_RING_AND_MAP | {BPF_GET_CURRENT_TASK}),
}


class CapabilityTable:
    def __init__(self, entries: Iterable[tuple[str, int]]):
        self._entries = frozenset(entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __len__(self):
        return len(self._entries)

    def allowed(self, program_type) -> frozenset[int]:
        ptype = str(program_type)
        return frozenset(h for t, h in self._entries if t == ptype)

    def entries(self) -> frozenset[tuple[str, int]]:
        return self._entries


@dataclass(frozen=True)
class CallVerdict:
    allowed: bool
    helper_id: int


def build_capability_table(policy: Mapping[str, Iterable[int]],
                           registry: HelperRegistry = DEFAULT_REGISTRY) -> CapabilityTable:
    entries = set()
    for program_type, helper_ids in policy.items():
        for helper_id in helper_ids:
            if helper_id not in registry:
                raise UnknownHelper(f"policy for {program_type} names unregistered helper "
                                    f"{helper_id}")
            entries.add((str(program_type), int(helper_id)))
    return CapabilityTable(entries)


def load_policy(path) -> dict[str, list[int]]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or not all(
            isinstance(v, list) and all(isinstance(i, int) for i in v) for v in doc.values()):
        raise ValueError(f"{path}: policy must map program types to lists of helper ids")
    return doc


def default_table() -> CapabilityTable:
    return build_capability_table(DEFAULT_POLICY)


def check_call(table: CapabilityTable, program_type, helper_id: int) -> CallVerdict:
    return CallVerdict((str(program_type), helper_id) in table, helper_id)


def dispatch(table: CapabilityTable, program_type, helper_id: int, args,
             env: HelperEnv, registry: HelperRegistry = DEFAULT_REGISTRY) -> int:
    """Trampoline: validate the call target, then run the helper."""
    verdict = check_call(table, program_type, helper_id)
    helper = registry.get(helper_id)
    if not verdict.allowed or helper is None:
        raise CfiViolation(f"{program_type} program may not call helper {helper_id}")
    env.sandbox.metadata.counters.trampoline_executed += 1
    return helper.sandboxed(env, *args) & 0xFFFF_FFFF_FFFF_FFFF
