"""Acceptance criteria.

Each test checks one criterion, enforces its time limit, and records a
PASS/FAIL line that is printed in the terminal summary of every pytest run.
"""

import functools
import itertools
import random
import time

import pytest

from ebpf_sfi import cfi
from ebpf_sfi.asm import parse_asm
from ebpf_sfi.cli import load_program
from ebpf_sfi.errors import TrapReason
from ebpf_sfi.executor import CostModel, Mode, account, execute
from ebpf_sfi.exploits import CASES, run_case
from ebpf_sfi.helpers import (
    DEFAULT_REGISTRY, ContextInput, Helper, HelperRegistry, Kernel, default_helpers,
    standard_kernel,
)
from ebpf_sfi.isa import Program, is_memory_access
from ebpf_sfi.rewriter import instrument
from ebpf_sfi.sandbox import ExecutedCounters, compute_masks, create_sandbox, mask_address

from conftest import (
    ACCEPTANCE_RESULTS, random_in_bounds_program, random_structural_program, scan_counts,
    tcp_packet,
)
from test_helpers import OPS, run_ringbuf_sequence


def criterion(number: int, title: str, limit_s: float):
    """Time the body, record PASS/FAIL, and fail if the limit is exceeded."""
    def wrap(body):
        @functools.wraps(body)
        def test():
            start = time.perf_counter()
            try:
                body()
            except BaseException as exc:
                elapsed = time.perf_counter() - start
                line = (f"FAIL criterion {number}: {title} ({elapsed:.3f} s; "
                        f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})")
                ACCEPTANCE_RESULTS.append(line)
                print(line)
                raise
            elapsed = time.perf_counter() - start
            verdict = "PASS" if elapsed < limit_s else "FAIL"
            line = f"{verdict} criterion {number}: {title} ({elapsed:.3f} s, limit {limit_s:g} s)"
            ACCEPTANCE_RESULTS.append(line)
            print(line)
            assert elapsed < limit_s, line
        return test
    return wrap


@criterion(1, "worked-example mask fidelity", 0.001)
def test_c01_worked_example():
    masks = compute_masks(0xDEADB800, 2048)
    assert (masks.and_mask, masks.or_mask) == (0x7FF, 0xDEADB800)
    assert mask_address(masks, 0xDEAF1234) == 0xDEADBA34


@criterion(2, "confinement sweeps (2^16 exhaustive @64, 10^6 random @4096)", 5.0)
def test_c02_confinement():
    small = create_sandbox(64, base=0x4000)
    lo, hi = small.base, small.end
    assert all(lo <= mask_address(small.masks, a) < hi for a in range(1 << 16))
    big = create_sandbox(4096)
    masks, lo, hi = big.masks, big.base, big.end
    rng = random.Random(2)
    bits = rng.getrandbits
    violations = sum(1 for _ in range(10**6) if not lo <= mask_address(masks, bits(64)) < hi)
    assert violations == 0


@criterion(3, "exploit containment (raw effect shown, sandboxed confined)", 10.0)
def test_c03_exploits():
    outcomes = [run_case(case) for case in CASES]
    assert len(outcomes) >= 5
    for o in outcomes:
        assert o.raw_effect, f"{o.case.name}: raw mode showed no effect"
        assert o.confined, f"{o.case.name}: {o.findings}"


ALLOWED_PROGRAMS = {
    1: "stw [r10-4], 0\nmov64 r1, 0\nmov64 r2, r10\nadd64 r2, -4\ncall 1\n",
    2: ("stw [r10-4], 0\nstdw [r10-16], 9\nmov64 r1, 0\nmov64 r2, r10\nadd64 r2, -4\n"
        "mov64 r3, r10\nadd64 r3, -16\nmov64 r4, 0\ncall 2\n"),
    35: "call 35\n",
    131: "mov64 r1, 1\nmov64 r2, 8\nmov64 r3, 0\ncall 131\n",
    132: "mov64 r1, 1\nmov64 r2, 8\nmov64 r3, 0\ncall 131\nmov64 r1, r0\nmov64 r2, 0\ncall 132\n",
    133: "mov64 r1, 1\nmov64 r2, 8\nmov64 r3, 0\ncall 131\nmov64 r1, r0\nmov64 r2, 0\ncall 133\n",
}


def _spy_registry(calls):
    def spy(hid):
        def body(env, *args):
            calls.append(hid)
            return 0
        return body
    return HelperRegistry(Helper(h.helper_id, h.name, h.nargs, spy(h.helper_id), spy(h.helper_id))
                          for h in default_helpers()).freeze()


@criterion(4, "CFI over every (type, helper) pair vs. linear-scan oracle", 5.0)
def test_c04_cfi():
    pairs = [(t, h) for t, ids in cfi.DEFAULT_POLICY.items() for h in ids]
    table = cfi.default_table()
    calls: list[int] = []
    spies = _spy_registry(calls)
    spy_table = cfi.build_capability_table(cfi.DEFAULT_POLICY, spies)
    disagreements = 0
    for ptype in cfi.DEFAULT_POLICY:
        for hid in DEFAULT_REGISTRY.ids() + [0, 7, 4242]:
            expected = any(t == ptype and h == hid for t, h in pairs)
            disagreements += cfi.check_call(table, ptype, hid).allowed != expected
            # helper bodies are entered exactly when permitted
            calls.clear()
            sandbox = create_sandbox()
            program = instrument(Program(parse_asm(f"call {hid}\nmov64 r0, 0\nexit"), ptype),
                                 sandbox.masks)
            r = execute(program, sandbox, table=spy_table, registry=spies, kernel=Kernel())
            if expected:
                assert r.returned and calls == [hid]
            else:
                assert r.trap is TrapReason.CFI_VIOLATION and calls == []
            # real helpers: permitted calls succeed, denied ones have no side effect
            kernel = standard_kernel()
            sandbox = create_sandbox()
            before = kernel.snapshot()
            setup = ALLOWED_PROGRAMS.get(hid, f"call {hid}\n") if expected else \
                f"mov64 r1, 1\nmov64 r2, 8\nmov64 r3, 0\ncall {hid}\n"
            program = instrument(Program(parse_asm(setup + "mov64 r0, 0\nexit"), ptype),
                                 sandbox.masks)
            r = execute(program, sandbox, table=table, kernel=kernel)
            if expected:
                assert r.returned, (ptype, hid, r.describe())
            else:
                assert r.trap is TrapReason.CFI_VIOLATION
                assert kernel.snapshot() == before
                assert sandbox.metadata.heap_cursor == sandbox.layout.heap_offset
                assert sandbox.metadata.counters.trampoline_executed == 0
    assert disagreements == 0


@criterion(5, "injected-count oracles on 200 random programs", 30.0)
def test_c05_count_oracles():
    rng = random.Random(5)
    masks = compute_masks(0xDEADB800, 2048)
    for _ in range(200):
        program = random_structural_program(rng, rng.randint(5, 80))
        stats = instrument(program, masks).injected
        assert (stats.mask_checks, stats.trampoline_checks) == scan_counts(program)
        assert stats.instrumented_bytes == stats.original_bytes + 64 * stats.mask_checks


@criterion(6, "path dependence: katran common path executes < 10% of injected checks", 5.0)
def test_c06_path_dependence():
    program = load_program("sample:katran_lb")
    raw = execute(program, create_sandbox(), kernel=standard_kernel(), mode=Mode.RAW,
                  trace=True, context=ContextInput.for_packet("xdp", tcp_packet()))
    by_slot = program.by_slot()
    on_path = sum(1 for t in raw.trace if is_memory_access(by_slot[t.slot]))
    sandbox = create_sandbox()
    out = instrument(program, sandbox.masks)
    r = execute(out, sandbox, kernel=standard_kernel(),
                context=ContextInput.for_packet("xdp", tcp_packet()))
    assert r.returned and r.value == raw.value
    assert r.counters.mask_executed == on_path
    assert r.counters.mask_executed * 10 < out.injected.mask_checks


@criterion(7, "differential semantics on 500 random in-bounds programs", 60.0)
def test_c07_differential():
    rng = random.Random(7)
    for _ in range(500):
        program = random_in_bounds_program(rng, rng.randint(10, 40))
        packet = bytes(rng.getrandbits(8) for _ in range(64))
        s_raw, s_sb = create_sandbox(), create_sandbox()
        mark = rng.getrandbits(32)
        c_raw = ContextInput.for_packet("socket_filter", packet, mark=mark)
        c_sb = ContextInput.for_packet("socket_filter", packet, mark=mark)
        raw = execute(program, s_raw, context=c_raw, mode=Mode.RAW)
        sb = execute(instrument(program, s_sb.masks), s_sb, context=c_sb)
        assert raw.returned and sb.returned
        assert raw.value == sb.value
        assert bytes(s_raw.memory) == bytes(s_sb.memory)
        assert bytes(c_raw.data) == bytes(c_sb.data)


@criterion(8, "termination: retired == budget for B in {10, 1000, 10^6}", 5.0)
def test_c08_termination():
    sandbox = create_sandbox()
    program = instrument(Program(parse_asm("loop: ja loop")), sandbox.masks)
    for budget in (10, 1000, 10**6):
        r = execute(program, sandbox, budget=budget)
        assert r.trap is TrapReason.BUDGET_EXHAUSTED
        assert r.counters.instructions_retired == budget


RING_PROGRAM = """
    mov64 r1, 1
    mov64 r2, 8
    mov64 r3, 0
    call 131
    mov64 r6, r0
    lddw r2, 0xefcdab8967452301
    stxdw [r6+0], r2
    mov64 r1, r6
    mov64 r2, 0
    call {settle}
    {tail}
    mov64 r0, 0
    exit
"""


def _ring_run(settle, tail=""):
    kernel = standard_kernel()
    sandbox = create_sandbox()
    text = RING_PROGRAM.format(settle=settle, tail=tail)
    r = execute(instrument(Program(parse_asm(text), "xdp"), sandbox.masks), sandbox,
                kernel=kernel)
    return r, kernel.ringbufs[1].records


@criterion(9, "ring buffer round trip and exhaustive state machine", 5.0)
def test_c09_ring_buffer():
    r, records = _ring_run(132)
    assert r.returned and records == [bytes.fromhex("0123456789abcdef")]
    r, records = _ring_run(133)
    assert r.returned and records == []
    r, records = _ring_run(132, "mov64 r1, r6\nmov64 r2, 0\ncall 132")
    assert r.trap is TrapReason.INVALID_RESERVATION and records == []
    r, records = _ring_run(132, "mov64 r1, r10\nadd64 r1, -8\nmov64 r2, 0\ncall 132")
    assert r.trap is TrapReason.INVALID_RESERVATION and records == []
    for seq in itertools.product(OPS, repeat=4):
        run_ringbuf_sequence(seq)


@criterion(10, "overhead accounting identity and linearity", 1.0)
def test_c10_accounting():
    rng = random.Random(10)
    for _ in range(5000):
        model = CostModel(rng.randint(0, 10**4), rng.randint(0, 10**4), rng.randint(0, 10**6))
        n1 = ExecutedCounters(rng.randint(0, 10**6), rng.randint(0, 10**6))
        n2 = ExecutedCounters(rng.randint(0, 10**6), rng.randint(0, 10**6))
        b1, b2 = account(n1, model), account(n2, model)
        both = account(ExecutedCounters(n1.mask_executed + n2.mask_executed,
                                        n1.trampoline_executed + n2.trampoline_executed), model)
        for b in (b1, b2, both):
            assert b.c_overall == b.c_mem + b.c_tram + b.c_manage
            assert b.c_manage == model.manage_cost
        assert both.c_mem == b1.c_mem + b2.c_mem
        assert both.c_tram == b1.c_tram + b2.c_tram
        k = rng.randint(0, 50)
        scaled = account(ExecutedCounters(k * n1.mask_executed, k * n1.trampoline_executed), model)
        assert (scaled.c_mem, scaled.c_tram) == (k * b1.c_mem, k * b1.c_tram)


pytestmark = pytest.mark.acceptance
