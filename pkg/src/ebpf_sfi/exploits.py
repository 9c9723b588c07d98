"""Out-of-bounds exploit corpus.

Each case models the effect of a verifier bypass: the program ends up holding
an attacker-chosen kernel address (as after a bounds-tracking confusion) and
uses it to read or write kernel memory, or hands a forged pointer to a ring
buffer helper.  Each case is run twice against fresh kernels carrying canary
objects.  Raw mode must show the out-of-bounds effect; sandboxed mode must
leave every canary intact and expose no canary bytes to the program.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from . import isa
from .asm import parse_asm
from .executor import ExecutionResult, Mode, execute
from .helpers import EVENTS_RINGBUF_ID, STATS_MAP_ID, ContextInput, Kernel, standard_kernel
from .isa import Program
from .rewriter import instrument
from .sandbox import Sandbox, create_sandbox

OOB_READ = "oob_read_succeeds"
OOB_WRITE = "oob_write_succeeds"

SECRET = bytes.fromhex("5ec2e7c0ffee1234")      # stands in for a leaked kernel pointer
CRED = (1000).to_bytes(4, "little") * 2         # uid/gid of an unprivileged task


@dataclass
class Target:
    """Addresses an attacker is assumed to know."""

    sandbox: Sandbox
    kernel: Kernel
    secret_address: int
    cred_address: int

    @property
    def metadata_address(self) -> int:
        return self.sandbox.metadata_address


@dataclass
class ExploitCase:
    name: str
    description: str
    expected_raw_outcome: str
    build: Callable[[Target], str]
    program_type: str = "socket_filter"
    expected_sandboxed_outcome: str = "confined"


def _delta(target_address: int, from_address: int) -> int:
    return (target_address - from_address) & isa.to_unsigned(-1, 64)


def _oob_read(t: Target) -> str:
    # the scalar the verifier believed was 0 is really the distance to the secret
    return f"""
        mov64 r2, r10
        lddw r3, {_delta(t.secret_address, t.sandbox.stack_top):#x}
        add64 r2, r3
        ldxdw r0, [r2+0]
        exit
    """


def _oob_write(t: Target) -> str:
    return f"""
        mov64 r2, r10
        lddw r3, {_delta(t.cred_address, t.sandbox.stack_top):#x}
        add64 r2, r3
        stdw [r2+0], 0          ; uid = gid = 0
        mov64 r0, 0
        exit
    """


def _leak_via_map(t: Target) -> str:
    return f"""
        mov64 r2, r10
        lddw r3, {_delta(t.secret_address, t.sandbox.stack_top):#x}
        add64 r2, r3
        ldxdw r6, [r2+0]
        stxdw [r10-8], r6
        stw [r10-12], 0
        mov64 r1, {STATS_MAP_ID}
        mov64 r2, r10
        add64 r2, -12
        mov64 r3, r10
        add64 r3, -8
        mov64 r4, 0
        call 2                  ; map_update_elem: user space reads the map
        mov64 r0, 0
        exit
    """


def _forged_submit(t: Target) -> str:
    return f"""
        mov64 r1, {EVENTS_RINGBUF_ID}
        mov64 r2, 8
        mov64 r3, 0
        call 131                ; ringbuf_reserve
        jeq r0, 0, out
        lddw r1, {t.cred_address + 8:#x}
        mov64 r2, 0
        call 132                ; ringbuf_submit with a forged sample pointer
    out:
        mov64 r0, 0
        exit
    """


def _metadata_overwrite(t: Target) -> str:
    return f"""
        mov64 r2, r10
        lddw r3, {_delta(t.metadata_address, t.sandbox.stack_top):#x}
        add64 r2, r3
        lddw r4, 0xffffffffffffffff
        stxdw [r2+0], r4        ; widen the stored and-mask
        mov64 r0, 0
        exit
    """


CASES = [
    ExploitCase("oob-read", "arbitrary kernel read through a confused scalar offset",
                OOB_READ, _oob_read),
    ExploitCase("oob-write", "overwrite a cred-like object through a confused offset",
                OOB_WRITE, _oob_write),
    ExploitCase("leak-via-map", "read a kernel secret and publish it through a map",
                OOB_READ, _leak_via_map),
    ExploitCase("ringbuf-forged-submit", "submit a forged ring buffer sample pointer",
                OOB_WRITE, _forged_submit),
    ExploitCase("metadata-overwrite", "overwrite sandbox metadata next to the region",
                OOB_WRITE, _metadata_overwrite),
]


def make_target(size: int = 4096, base: Optional[int] = None) -> Target:
    sandbox = create_sandbox(size, base=base)
    kernel = standard_kernel()
    secret = kernel.add_region("secret", SECRET)
    cred = kernel.add_region("cred", CRED)
    return Target(sandbox, kernel, secret.address, cred.address)


@dataclass
class CaseOutcome:
    case: ExploitCase
    raw: ExecutionResult
    sandboxed: ExecutionResult
    raw_effect: bool
    confined: bool
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.raw_effect and self.confined

    def to_dict(self) -> dict:
        return {
            "name": self.case.name,
            "expected_raw_outcome": self.case.expected_raw_outcome,
            "raw_effect": self.raw_effect,
            "confined": self.confined,
            "raw": self.raw.to_dict(),
            "sandboxed": self.sandboxed.to_dict(),
            "findings": self.findings,
        }


def _external_image(t: Target) -> dict:
    image = t.kernel.snapshot()
    image["metadata"] = bytes(t.sandbox.metadata_block)
    return image


def _leaked(t: Target, r: ExecutionResult) -> list[str]:
    """Canary bytes visible anywhere the program or user space can observe."""
    found = []
    canaries = {"secret": SECRET, "cred": CRED, "metadata": bytes(t.sandbox.metadata_block[:16])}
    if r.value is not None:
        value = r.value.to_bytes(8, "little")
        for name, data in canaries.items():
            if value == data[:8]:
                found.append(f"r0 holds the {name} canary")
    for oid, ring in t.kernel.ringbufs.items():
        for rec in ring.records:
            for name, data in canaries.items():
                if data[:8] in rec:
                    found.append(f"ring buffer {oid} record carries the {name} canary")
    for oid, amap in t.kernel.maps.items():
        for name, data in canaries.items():
            if data[:8] in amap.backing:
                found.append(f"map {oid} carries the {name} canary")
    for name, data in canaries.items():
        if name != "metadata" and data[:8] in t.sandbox.memory:
            found.append(f"sandbox memory carries the {name} canary")
    return found


def _raw_effect(case: ExploitCase, before: dict, t: Target, r: ExecutionResult) -> bool:
    if case.expected_raw_outcome == OOB_READ:
        return bool(_leaked(t, r))
    return _external_image(t)["regions"] != before["regions"] or \
        _external_image(t)["metadata"] != before["metadata"]


def run_case(case: ExploitCase, size: int = 4096, base: Optional[int] = None,
             budget: int = 10_000) -> CaseOutcome:
    # raw: fresh kernel, unmodified program, vanilla helpers
    t = make_target(size, base)
    program = Program(parse_asm(case.build(t)), case.program_type, case.name)
    before = _external_image(t)
    raw = execute(program, t.sandbox, kernel=t.kernel, mode=Mode.RAW, budget=budget,
                  context=ContextInput.for_packet(case.program_type, bytes(64)))
    raw_effect = _raw_effect(case, before, t, raw)

    # sandboxed: identical fresh kernel and addresses
    t = make_target(size, base)
    program = Program(parse_asm(case.build(t)), case.program_type, case.name)
    before = _external_image(t)
    sandboxed = execute(instrument(program, t.sandbox.masks), t.sandbox, kernel=t.kernel,
                        budget=budget, detect=True,
                        context=ContextInput.for_packet(case.program_type, bytes(64)))
    findings = _leaked(t, sandboxed)
    after = _external_image(t)
    for kind in ("regions", "metadata"):
        if after[kind] != before[kind]:
            findings.append(f"external {kind} modified")
    return CaseOutcome(case, raw, sandboxed, raw_effect, not findings, findings)


def run_suite(size: int = 4096, base: Optional[int] = None) -> list[CaseOutcome]:
    return [run_case(case, size, base) for case in CASES]


__all__ = ["CASES", "ExploitCase", "CaseOutcome", "run_case", "run_suite", "make_target",
           "OOB_READ", "OOB_WRITE"]
