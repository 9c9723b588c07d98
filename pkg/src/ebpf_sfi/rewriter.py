"""Bytecode rewriting pass.

Every load and store is expanded into an address-masking sequence that routes
the access through scratch register r11::

    mov64 r11, <base>
    add64 r11, <offset>
    lddw  r12, <and_mask>
    and64 r11, r12
    lddw  r12, <or_mask>
    or64  r11, r12
    <original access with base r11, offset 0>

Every call is rewritten in place into the guarded form, which the executor
routes through the capability-checking trampoline.  Jump offsets are then
recomputed against the new layout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from . import isa
from .errors import AlreadyInstrumented, OffsetOverflow
from .isa import (
    CLS_ALU64, CLS_LDX, GUARDED_CALL_MARKER, OP_CALL, SCRATCH_ADDR, SCRATCH_MASK,
    SRC_K, SRC_X, Instruction, InstructionClass, Program, ProgramType,
)
from .sandbox import AddressMasks

MOV64_REG = CLS_ALU64 | isa.ALU_OPS["mov"] | SRC_X
ADD64_IMM = CLS_ALU64 | isa.ALU_OPS["add"] | SRC_K
AND64_REG = CLS_ALU64 | isa.ALU_OPS["and"] | SRC_X
OR64_REG = CLS_ALU64 | isa.ALU_OPS["or"] | SRC_X

MASK_SEQUENCE_SLOTS = 9
ADDED_SLOTS_PER_ACCESS = MASK_SEQUENCE_SLOTS - 1
ADDED_BYTES_PER_ACCESS = ADDED_SLOTS_PER_ACCESS * isa.SLOT_SIZE


@dataclass(frozen=True)
class InjectedStats:
    mask_checks: int
    trampoline_checks: int
    original_bytes: int
    instrumented_bytes: int

    @property
    def growth_percent(self) -> float:
        if not self.original_bytes:
            return 0.0
        return 100.0 * (self.instrumented_bytes - self.original_bytes) / self.original_bytes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["growth_percent"] = self.growth_percent
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class InstrumentedProgram:
    instructions: list[Instruction]
    # origin_map[out_slot] -> input slot the output slot was derived from
    origin_map: list[int]
    # anchor_map[in_slot] -> output slot holding the (rewritten) original instruction
    anchor_map: dict[int, int]
    injected: InjectedStats
    masks: AddressMasks
    program_type: ProgramType
    name: str

    @property
    def program(self) -> Program:
        return Program(self.instructions, self.program_type, self.name)

    @property
    def slot_count(self) -> int:
        return len(self.origin_map)

    def encode(self) -> bytes:
        return isa.encode(self.instructions)


def masking_sequence(base_reg: int, offset: int, masks: AddressMasks) -> list[Instruction]:
    """The six instructions (eight slots) that leave the confined address in r11."""
    return [
        Instruction(MOV64_REG, dst=SCRATCH_ADDR, src=base_reg),
        Instruction(ADD64_IMM, dst=SCRATCH_ADDR, imm=offset),
        isa.lddw(SCRATCH_MASK, masks.and_mask),
        Instruction(AND64_REG, dst=SCRATCH_ADDR, src=SCRATCH_MASK),
        isa.lddw(SCRATCH_MASK, masks.or_mask),
        Instruction(OR64_REG, dst=SCRATCH_ADDR, src=SCRATCH_MASK),
    ]


def _rebase_access(insn: Instruction) -> tuple[int, int, Instruction]:
    """Return (base register, offset, access rewritten to [r11+0])."""
    if insn.opcode & 0x07 == CLS_LDX:
        return insn.src, insn.offset, Instruction(insn.opcode, dst=insn.dst, src=SCRATCH_ADDR)
    return insn.dst, insn.offset, Instruction(insn.opcode, dst=SCRATCH_ADDR, src=insn.src,
                                              imm=insn.imm)


def instrument(program: Program, masks: AddressMasks) -> InstrumentedProgram:
    for slot, insn in zip(program.slot_starts(), program.instructions):
        if any(r > isa.MAX_USER_REG for r in insn.registers()):
            raise AlreadyInstrumented(f"slot {slot} already uses a scratch register")

    out: list[Instruction] = []
    out_slots: list[int] = []       # output slot of each emitted instruction
    origin: list[int] = []
    first_out: dict[int, int] = {}  # input slot -> first output slot of its sequence
    anchor: dict[int, int] = {}
    jumps = []                      # (index into out, input slot, original offset)
    mask_checks = trampolines = 0
    cursor = 0

    def emit(insn, in_slot):
        nonlocal cursor
        out.append(insn)
        out_slots.append(cursor)
        origin.extend([in_slot] * insn.width)
        cursor += insn.width

    for in_slot, insn in zip(program.slot_starts(), program.instructions):
        first_out[in_slot] = cursor
        kind = isa.classify(insn)
        if kind in (InstructionClass.LOAD, InstructionClass.STORE):
            base, offset, access = _rebase_access(insn)
            for step in masking_sequence(base, offset, masks):
                emit(step, in_slot)
            anchor[in_slot] = cursor
            emit(access, in_slot)
            mask_checks += 1
            continue
        anchor[in_slot] = cursor
        if kind is InstructionClass.CALL:
            emit(Instruction(OP_CALL, src=GUARDED_CALL_MARKER, imm=insn.imm), in_slot)
            trampolines += 1
        else:
            if kind is InstructionClass.JUMP:
                jumps.append((len(out), in_slot, insn.offset))
            emit(insn, in_slot)

    for index, in_slot, offset in jumps:
        target = in_slot + 1 + offset
        if target not in first_out:
            raise ValueError(f"jump at slot {in_slot} targets {target}, which is not an "
                             "instruction boundary; run precheck first")
        new_offset = first_out[target] - (out_slots[index] + 1)
        if not -(1 << 15) <= new_offset < (1 << 15):
            raise OffsetOverflow(f"jump at slot {in_slot} needs offset {new_offset}")
        old = out[index]
        out[index] = Instruction(old.opcode, old.dst, old.src, new_offset, old.imm)

    original_bytes = program.slot_count * isa.SLOT_SIZE
    stats = InjectedStats(
        mask_checks=mask_checks,
        trampoline_checks=trampolines,
        original_bytes=original_bytes,
        instrumented_bytes=cursor * isa.SLOT_SIZE,
    )
    return InstrumentedProgram(out, origin, anchor, stats, masks,
                               program.program_type, program.name)


def size_report(injected: InjectedStats) -> str:
    return (
        f"original:      {injected.original_bytes} bytes\n"
        f"instrumented:  {injected.instrumented_bytes} bytes\n"
        f"growth:        {injected.growth_percent:.1f}%\n"
        f"mask checks:   {injected.mask_checks}\n"
        f"trampolines:   {injected.trampoline_checks}\n"
    )
