"""Interpreter for instrumented (and, for testing, raw) programs.

Sandboxed runs execute a rewritten program: memory accesses go through the
masking sequences already present in the code, and guarded calls go through
the capability trampoline.  Raw runs execute an unmodified program with
vanilla helpers; they exist to show what the sandbox prevents and to
differential-test the rewriter.
"""

from __future__ import annotations

import enum
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

from . import cfi
from .asm import format_instruction
from .errors import (
    BudgetExhausted, IllegalInstruction, TimerUnavailable, Trap, TrapReason,
)
from .helpers import (
    DEFAULT_REGISTRY, ContextInput, HelperEnv, HelperRegistry, Kernel,
    map_sync, mirror_context, release_open_reservations, sync_context,
)
from .isa import (
    CLS_ALU, CLS_ALU64, CLS_JMP, CLS_JMP32, CLS_LDX, CLS_ST, CLS_STX, GUARDED_CALL_MARKER,
    OP_CALL, OP_EXIT, OP_JA, OP_LDDW, SCRATCH_ADDR, SCRATCH_MASK, SIZE_BYTES, SRC_X,
    Instruction, Program, to_unsigned,
)
from .memory import AddressSpace
from .rewriter import AND64_REG, OR64_REG, InstrumentedProgram
from .sandbox import ConfinementEvent, ExecutedCounters, Sandbox, create_sandbox

M64 = (1 << 64) - 1
M32 = (1 << 32) - 1
SIGN64 = 1 << 63
SIGN32 = 1 << 31

DEFAULT_BUDGET = 1_000_000


class Mode(str, enum.Enum):
    SANDBOXED = "sandboxed"
    RAW = "raw"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class CostModel:
    unit_mask_cost: float
    unit_trampoline_cost: float
    manage_cost: float

    def __post_init__(self):
        if min(self.unit_mask_cost, self.unit_trampoline_cost, self.manage_cost) < 0:
            raise ValueError("cost model entries must be non-negative")


# abstract units: one per executed check plus one per run
UNIT_COST_MODEL = CostModel(1, 1, 1)


@dataclass(frozen=True)
class OverheadBreakdown:
    c_mem: float
    c_tram: float
    c_manage: float
    c_overall: float


def account(counters: ExecutedCounters, cost_model: CostModel) -> OverheadBreakdown:
    c_mem = counters.mask_executed * cost_model.unit_mask_cost
    c_tram = counters.trampoline_executed * cost_model.unit_trampoline_cost
    c_manage = cost_model.manage_cost
    return OverheadBreakdown(c_mem, c_tram, c_manage, c_mem + c_tram + c_manage)


@dataclass(frozen=True)
class TraceEntry:
    slot: int
    origin: int
    mnemonic: str

    def __str__(self):
        return f"{self.slot:5d} {self.origin:5d}  {self.mnemonic}"


@dataclass
class ExecutionResult:
    value: Optional[int]
    trap: Optional[TrapReason]
    counters: ExecutedCounters
    breakdown: OverheadBreakdown
    detail: str = ""
    confinement_events: list[ConfinementEvent] = field(default_factory=list)
    trace: Optional[list[TraceEntry]] = None

    @property
    def returned(self) -> bool:
        return self.trap is None

    @property
    def status(self) -> str:
        return "returned" if self.returned else "trap"

    def describe(self) -> str:
        if self.returned:
            return f"returned {self.value}"
        return f"trap {self.trap.value}" + (f" ({self.detail})" if self.detail else "")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "value": self.value,
            "trap": None if self.trap is None else self.trap.value,
            "detail": self.detail,
            "counters": asdict(self.counters),
            "breakdown": asdict(self.breakdown),
            "confinement_events": [
                {"instruction_index": e.instruction_index,
                 "original_address": e.original_address,
                 "masked_address": e.masked_address}
                for e in self.confinement_events
            ],
        }


def _predecode(instructions: list[Instruction]) -> list[Optional[tuple]]:
    code: list[Optional[tuple]] = []
    for insn in instructions:
        if insn.opcode == OP_LDDW:
            code.append((OP_LDDW, insn.dst, 0, 0, to_unsigned(insn.wide, 64)))
            code.append(None)
        else:
            code.append((insn.opcode, insn.dst, insn.src, insn.offset, insn.imm))
    return code


def _signed(value, sign):
    return value - (sign << 1) if value & sign else value


def _alu(op, a, b, bits):
    """One ALU operation on unsigned operands of width ``bits``."""
    mask = M64 if bits == 64 else M32
    sign = SIGN64 if bits == 64 else SIGN32
    shift_mask = bits - 1
    if op == 0x00:
        return (a + b) & mask
    if op == 0x10:
        return (a - b) & mask
    if op == 0x20:
        return (a * b) & mask
    if op == 0x30:
        return a // b if b else 0
    if op == 0x40:
        return a | b
    if op == 0x50:
        return a & b
    if op == 0x60:
        return (a << (b & shift_mask)) & mask
    if op == 0x70:
        return a >> (b & shift_mask)
    if op == 0x80:
        return -a & mask
    if op == 0x90:
        return a % b if b else a
    if op == 0xA0:
        return a ^ b
    if op == 0xB0:
        return b
    if op == 0xC0:
        return (_signed(a, sign) >> (b & shift_mask)) & mask
    raise IllegalInstruction(f"ALU op {op:#x}")


def _taken(op, a, b, bits):
    if op == 0x10:
        return a == b
    if op == 0x50:
        return a != b
    if op == 0x20:
        return a > b
    if op == 0x30:
        return a >= b
    if op == 0xA0:
        return a < b
    if op == 0xB0:
        return a <= b
    if op == 0x40:
        return bool(a & b)
    sign = SIGN64 if bits == 64 else SIGN32
    sa, sb = _signed(a, sign), _signed(b, sign)
    if op == 0x60:
        return sa > sb
    if op == 0x70:
        return sa >= sb
    if op == 0xC0:
        return sa < sb
    if op == 0xD0:
        return sa <= sb
    raise IllegalInstruction(f"jump op {op:#x}")


class _Machine:
    def __init__(self, code, space, counters, budget, call, origin=None, detect=False,
                 events=None, tracing=False, count_masks=False):
        self.code = code
        self.space = space
        self.counters = counters
        self.budget = budget
        self.call = call
        self.origin = origin
        self.detect = detect
        self.events = events
        self.pcs = [] if tracing else None
        self.count_masks = count_masks

    def run(self, regs: list[int]) -> int:
        code, space, counters = self.code, self.space, self.counters
        budget, pcs = self.budget, self.pcs
        load, store = space.load, space.store
        n = len(code)
        pc = 0
        retired = 0
        pending_mask = None
        try:
            while True:
                if retired >= budget:
                    raise BudgetExhausted(f"budget of {budget} instructions used up")
                if not 0 <= pc < n or code[pc] is None:
                    raise IllegalInstruction(f"control reached slot {pc}")
                op, dst, src, off, imm = code[pc]
                retired += 1
                if pcs is not None:
                    pcs.append(pc)
                cls = op & 0x07

                if cls == CLS_ALU64:
                    b = regs[src] if op & SRC_X else imm & M64
                    result = _alu(op & 0xF0, regs[dst], b, 64)
                    if dst == SCRATCH_ADDR and src == SCRATCH_MASK and self.count_masks:
                        if op == AND64_REG:
                            pending_mask = regs[dst]
                        elif op == OR64_REG and pending_mask is not None:
                            counters.mask_executed += 1
                            if self.detect and result != pending_mask:
                                self.events.append(ConfinementEvent(
                                    self.origin[pc], pending_mask, result))
                            pending_mask = None
                    regs[dst] = result
                    pc += 1
                elif cls == CLS_JMP or cls == CLS_JMP32:
                    if op == OP_JA:
                        pc += 1 + off
                        continue
                    if op == OP_CALL:
                        regs[0] = self.call(src, imm, regs[1], regs[2], regs[3], regs[4],
                                            regs[5])
                        regs[1] = regs[2] = regs[3] = regs[4] = regs[5] = 0
                        pc += 1
                        continue
                    if op == OP_EXIT:
                        return regs[0]
                    if cls == CLS_JMP:
                        a = regs[dst]
                        b = regs[src] if op & SRC_X else imm & M64
                        taken = _taken(op & 0xF0, a, b, 64)
                    else:
                        a = regs[dst] & M32
                        b = (regs[src] if op & SRC_X else imm) & M32
                        taken = _taken(op & 0xF0, a, b, 32)
                    pc += 1 + off if taken else 1
                elif cls == CLS_LDX:
                    regs[dst] = load((regs[src] + off) & M64, SIZE_BYTES[op & 0x18])
                    pc += 1
                elif cls == CLS_STX:
                    store((regs[dst] + off) & M64, SIZE_BYTES[op & 0x18], regs[src])
                    pc += 1
                elif cls == CLS_ST:
                    store((regs[dst] + off) & M64, SIZE_BYTES[op & 0x18], imm)
                    pc += 1
                elif cls == CLS_ALU:
                    b = regs[src] if op & SRC_X else imm
                    regs[dst] = _alu(op & 0xF0, regs[dst] & M32, b & M32, 32)
                    pc += 1
                elif op == OP_LDDW:
                    regs[dst] = imm
                    pc += 2
                else:
                    raise IllegalInstruction(f"opcode {op:#x} at slot {pc}")
        finally:
            counters.instructions_retired = retired


def execute(program: Union[InstrumentedProgram, Program], sandbox: Sandbox, *,
            context: Optional[ContextInput] = None,
            kernel: Optional[Kernel] = None,
            table: Optional[cfi.CapabilityTable] = None,
            budget: int = DEFAULT_BUDGET,
            mode: Union[Mode, str] = Mode.SANDBOXED,
            detect: bool = False,
            trace: bool = False,
            registry: HelperRegistry = DEFAULT_REGISTRY,
            cost_model: CostModel = UNIT_COST_MODEL) -> ExecutionResult:
    """Run ``program`` once inside ``sandbox``.

    The sandbox is reset first.  On a normal exit, writable context fields
    and map copies are synced back to ``context`` and ``kernel``; on a trap
    nothing external changes (ring-buffer state is rolled back).
    """
    mode = Mode(mode)
    if mode is Mode.SANDBOXED:
        if not isinstance(program, InstrumentedProgram):
            raise ValueError("sandboxed mode runs instrumented programs only")
        if program.masks != sandbox.masks:
            raise ValueError("program was instrumented for a different sandbox")
        instructions, origin = program.instructions, program.origin_map
    else:
        if isinstance(program, InstrumentedProgram):
            raise ValueError("raw mode runs the uninstrumented program")
        instructions, origin = program.instructions, list(range(program.slot_count))
    program_type = program.program_type
    kernel = kernel if kernel is not None else Kernel()
    table = table if table is not None else cfi.default_table()
    context = context if context is not None else ContextInput.empty()

    sandbox.reset()
    space = AddressSpace()
    space.map(sandbox.base, sandbox.memory, "sandbox")
    space.map(sandbox.metadata_address, sandbox.metadata_block, "sandbox-metadata")
    kernel.map_into(space)
    env = HelperEnv(sandbox, kernel, space)
    counters = sandbox.metadata.counters
    events = sandbox.metadata.confinement_events

    if mode is Mode.SANDBOXED:
        def call(src, helper_id, *args):
            if src != GUARDED_CALL_MARKER:
                raise IllegalInstruction(f"unguarded call to helper {helper_id}")
            return cfi.dispatch(table, program_type, helper_id, args, env, registry)
    else:
        def call(src, helper_id, *args):
            helper = registry.get(helper_id)
            if src != 0 or helper is None:
                raise IllegalInstruction(f"call to unknown helper {helper_id}")
            return helper.raw(env, *args) & M64

    machine = _Machine(_predecode(instructions), space, counters, budget, call,
                       origin=origin, detect=detect, events=events, tracing=trace,
                       count_masks=mode is Mode.SANDBOXED)
    rings = {k: r.checkpoint() for k, r in kernel.ringbufs.items()}
    regs = [0] * 13
    trap = None
    detail = ""
    value = None
    try:
        regs[1] = mirror_context(sandbox, context.descriptor, bytes(context.data),
                                 context.regions)
        regs[10] = sandbox.stack_top
        value = machine.run(regs)
    except Trap as exc:
        trap, detail = exc.reason, exc.detail
    if trap is None:
        if mode is Mode.SANDBOXED:
            release_open_reservations(sandbox)
        data, regions = sync_context(sandbox, context.descriptor, bytes(context.data),
                                     context.regions)
        context.data[:] = data
        for name, region in regions.items():
            context.regions[name][:] = region
        map_sync(sandbox)
    elif mode is Mode.SANDBOXED:
        for k, state in rings.items():
            kernel.ringbufs[k].restore(state)

    trace_entries = None
    if machine.pcs is not None:
        by_slot = {}
        slot = 0
        for insn in instructions:
            by_slot[slot] = format_instruction(insn)
            slot += insn.width
        trace_entries = [TraceEntry(pc, origin[pc], by_slot[pc]) for pc in machine.pcs]
    final = ExecutedCounters(**asdict(counters))
    return ExecutionResult(value, trap, final, account(final, cost_model), detail,
                           list(events), trace_entries)


def _clock_ns() -> int:
    return time.perf_counter_ns()


def calibrate(iterations: int = 1000) -> CostModel:
    """Measure unit costs (nanoseconds) with micro-loops on this machine."""
    if iterations < 1000:
        raise ValueError("calibration needs at least 1000 iterations")
    if time.get_clock_info("perf_counter").resolution > 1e-6:
        raise TimerUnavailable("perf_counter resolution is coarser than 1us")
    from .asm import parse_asm
    from .rewriter import instrument

    accesses = 16
    raw = Program(parse_asm("ldxdw r0, [r10-8]\n" * accesses + "exit\n"), "socket_filter")
    sandbox = create_sandbox()
    sandboxed = instrument(raw, sandbox.masks)
    table = cfi.default_table()
    runs = max(1, iterations // accesses)

    def timed(fn, reps):
        best = None
        for _ in range(3):
            start = _clock_ns()
            for _ in range(reps):
                fn()
            elapsed = _clock_ns() - start
            best = elapsed if best is None else min(best, elapsed)
        return best / reps

    t_raw = timed(lambda: execute(raw, sandbox, table=table, mode=Mode.RAW), runs)
    t_sb = timed(lambda: execute(sandboxed, sandbox, table=table), runs)
    mask_cost = max(0.0, (t_sb - t_raw) / accesses)

    counters = sandbox.metadata.counters

    def trampoline_check():
        if not cfi.check_call(table, "socket_filter", 35).allowed:
            raise AssertionError("calibration helper must be allowed")
        counters.trampoline_executed += 1

    tram_cost = timed(trampoline_check, iterations)

    ctx = ContextInput.for_packet("xdp", bytes(64))

    def manage():
        sandbox.reset()
        mirror_context(sandbox, ctx.descriptor, bytes(ctx.data), ctx.regions)
        sync_context(sandbox, ctx.descriptor, bytes(ctx.data), ctx.regions)

    manage_cost = timed(manage, iterations)
    return CostModel(mask_cost, tram_cost, manage_cost)
