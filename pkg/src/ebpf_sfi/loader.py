"""Static pre-checks run before a program is instrumented.

These are the structural checks of the verifier's first pass: program size,
jump bounds, reachability, back edges, and fall-through.  Memory safety and
call validity are left to the run-time checks inserted by the rewriter.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .isa import (
    OP_EXIT, OP_JA, InstructionClass, Program, OPCODE_CLASS,
)

MAX_INSTRUCTIONS = 4096


class ViolationCode(str, enum.Enum):
    TOO_LARGE = "TooLarge"
    EMPTY = "EmptyProgram"
    JUMP_OUT_OF_RANGE = "JumpOutOfRange"
    JUMP_INTO_WIDE_LOAD = "JumpIntoWideLoad"
    UNREACHABLE = "Unreachable"
    BACK_EDGE = "BackEdge"
    RESERVED_REGISTER = "ReservedRegister"
    FALL_THROUGH = "FallThrough"
    INVALID_OPCODE = "InvalidOpcode"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Violation:
    code: ViolationCode
    instruction_index: int
    detail: str

    def to_dict(self):
        return {"code": self.code.value, "instruction_index": self.instruction_index,
                "detail": self.detail}


@dataclass
class CheckReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return not self.violations

    def codes(self) -> set[ViolationCode]:
        return {v.code for v in self.violations}

    def to_dict(self):
        return {"accepted": self.accepted,
                "violations": [v.to_dict() for v in self.violations]}


@dataclass(frozen=True)
class Limits:
    max_instructions: Optional[int] = MAX_INSTRUCTIONS
    allow_back_edges: bool = False
    # rewriter output legitimately names r11/r12
    allow_scratch_registers: bool = False


def precheck(program: Program, limits: Limits = Limits()) -> CheckReport:
    report = CheckReport()
    add = report.violations.append
    insns = program.instructions
    starts = program.slot_starts()
    nslots = program.slot_count
    at_slot = dict(zip(starts, insns))

    if not insns:
        add(Violation(ViolationCode.EMPTY, 0, "program has no instructions"))
        return report
    if limits.max_instructions is not None and nslots > limits.max_instructions:
        add(Violation(ViolationCode.TOO_LARGE, nslots - 1,
                      f"{nslots} instructions exceed the limit of {limits.max_instructions}"))

    # per-instruction checks and successor edges
    succ: dict[int, list[int]] = {}
    for slot, insn in at_slot.items():
        kind = OPCODE_CLASS.get(insn.opcode)
        if kind is None:
            add(Violation(ViolationCode.INVALID_OPCODE, slot, f"opcode {insn.opcode:#x}"))
            succ[slot] = []
            continue
        if not limits.allow_scratch_registers:
            reserved = sorted(r for r in insn.registers() if r > 10)
            if reserved:
                add(Violation(ViolationCode.RESERVED_REGISTER, slot,
                              f"uses reserved register(s) {reserved}"))
        edges = []
        if kind is InstructionClass.JUMP:
            target = slot + 1 + insn.offset
            if not 0 <= target < nslots:
                add(Violation(ViolationCode.JUMP_OUT_OF_RANGE, slot,
                              f"jump target {target} outside [0, {nslots})"))
            elif target not in at_slot:
                add(Violation(ViolationCode.JUMP_INTO_WIDE_LOAD, slot,
                              f"jump target {target} is the second slot of a wide load"))
            else:
                edges.append(target)
                if not limits.allow_back_edges and target <= slot:
                    add(Violation(ViolationCode.BACK_EDGE, slot,
                                  f"backward jump to {target}"))
            if insn.opcode != OP_JA:
                edges.append(slot + 1)
        elif insn.opcode != OP_EXIT:
            edges.append(slot + insn.width)
        succ[slot] = edges

    # depth-first search from slot 0
    seen = set()
    stack = [starts[0]]
    fell_off = set()
    while stack:
        slot = stack.pop()
        if slot in seen:
            continue
        seen.add(slot)
        for nxt in succ[slot]:
            if nxt >= nslots:
                fell_off.add(slot)
            elif nxt in at_slot and nxt not in seen:
                stack.append(nxt)
    for slot in sorted(fell_off):
        add(Violation(ViolationCode.FALL_THROUGH, slot, "execution falls off the end"))
    for slot in starts:
        if slot not in seen:
            add(Violation(ViolationCode.UNREACHABLE, slot, "instruction is unreachable"))

    report.violations.sort(key=lambda v: (v.instruction_index, v.code.value))
    return report
