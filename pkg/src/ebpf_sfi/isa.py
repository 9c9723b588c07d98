"""eBPF instruction encoding: opcodes, the Instruction/Program types, decode,
encode and classify.

Only the subset needed by the sandbox is accepted: 32/64-bit ALU, the wide
immediate load, register-indirect loads and stores of width 1/2/4/8,
conditional and unconditional jumps (64- and 32-bit compares), call and exit.
Atomics, tail calls, byte swaps and legacy packet loads are decode errors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .errors import (
    BadRegister,
    MalformedWideLoad,
    RangeError,
    TruncatedProgram,
    UnknownOpcode,
)

SLOT_SIZE = 8

# instruction classes
CLS_LD = 0x00
CLS_LDX = 0x01
CLS_ST = 0x02
CLS_STX = 0x03
CLS_ALU = 0x04
CLS_JMP = 0x05
CLS_JMP32 = 0x06
CLS_ALU64 = 0x07

# source operand
SRC_K = 0x00
SRC_X = 0x08

# memory access sizes and modes
SIZE_W = 0x00
SIZE_H = 0x08
SIZE_B = 0x10
SIZE_DW = 0x18
MODE_IMM = 0x00
MODE_MEM = 0x60

SIZE_BYTES = {SIZE_B: 1, SIZE_H: 2, SIZE_W: 4, SIZE_DW: 8}
SIZE_SUFFIX = {SIZE_B: "b", SIZE_H: "h", SIZE_W: "w", SIZE_DW: "dw"}

ALU_OPS = {
    "add": 0x00, "sub": 0x10, "mul": 0x20, "div": 0x30, "or": 0x40,
    "and": 0x50, "lsh": 0x60, "rsh": 0x70, "neg": 0x80, "mod": 0x90,
    "xor": 0xA0, "mov": 0xB0, "arsh": 0xC0,
}
JMP_OPS = {
    "jeq": 0x10, "jgt": 0x20, "jge": 0x30, "jset": 0x40, "jne": 0x50,
    "jsgt": 0x60, "jsge": 0x70, "jlt": 0xA0, "jle": 0xB0, "jslt": 0xC0,
    "jsle": 0xD0,
}
OP_JA = 0x05
OP_CALL = 0x85
OP_EXIT = 0x95
OP_LDDW = CLS_LD | MODE_IMM | SIZE_DW  # 0x18

# scratch registers reserved for instrumentation
SCRATCH_ADDR = 11
SCRATCH_MASK = 12
MAX_USER_REG = 10
MAX_REG = 12
FRAME_REG = 10

# A call whose src_reg holds this marker is the guarded (trampolined) form.
# The marker is a reserved register index, so user programs cannot forge it
# past the loader.
GUARDED_CALL_MARKER = SCRATCH_ADDR


class InstructionClass(str, Enum):
    ALU = "alu"
    LOAD = "load"
    STORE = "store"
    JUMP = "jump"
    CALL = "call"
    EXIT = "exit"
    LOAD_IMM64 = "load_imm64"


class ProgramType(str, Enum):
    XDP = "xdp"
    SOCKET_FILTER = "socket_filter"

    def __str__(self):
        return self.value


def _build_opcode_table() -> dict[int, InstructionClass]:
    table = {}
    for cls in (CLS_ALU, CLS_ALU64):
        for name, op in ALU_OPS.items():
            table[cls | op | SRC_K] = InstructionClass.ALU
            if name != "neg":
                table[cls | op | SRC_X] = InstructionClass.ALU
    table[OP_LDDW] = InstructionClass.LOAD_IMM64
    for size in SIZE_BYTES:
        table[CLS_LDX | MODE_MEM | size] = InstructionClass.LOAD
        table[CLS_ST | MODE_MEM | size] = InstructionClass.STORE
        table[CLS_STX | MODE_MEM | size] = InstructionClass.STORE
    table[OP_JA] = InstructionClass.JUMP
    for cls in (CLS_JMP, CLS_JMP32):
        for op in JMP_OPS.values():
            table[cls | op | SRC_K] = InstructionClass.JUMP
            table[cls | op | SRC_X] = InstructionClass.JUMP
    table[OP_CALL] = InstructionClass.CALL
    table[OP_EXIT] = InstructionClass.EXIT
    return table


OPCODE_CLASS = _build_opcode_table()


def to_signed(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


def to_unsigned(value: int, bits: int) -> int:
    return value & ((1 << bits) - 1)


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    ``wide`` is set only for the 64-bit immediate load, which occupies two
    slots.  For that form ``imm`` mirrors the low half of ``wide``.
    """

    opcode: int
    dst: int = 0
    src: int = 0
    offset: int = 0
    imm: int = 0
    wide: Optional[int] = None

    def __post_init__(self):
        if self.opcode == OP_LDDW and isinstance(self.wide, int) \
                and -(1 << 63) <= self.wide < (1 << 64):
            wide = to_signed(self.wide, 64)
            object.__setattr__(self, "wide", wide)
            object.__setattr__(self, "imm", to_signed(wide, 32))

    @property
    def width(self) -> int:
        """Slot count: 2 for the wide load, 1 otherwise."""
        return 2 if self.opcode == OP_LDDW else 1

    @property
    def is_guarded_call(self) -> bool:
        return self.opcode == OP_CALL and self.src == GUARDED_CALL_MARKER

    @property
    def access_size(self) -> int:
        return SIZE_BYTES[self.opcode & 0x18]

    def registers(self) -> set[int]:
        """Register indices the instruction names (used or defined)."""
        kind = OPCODE_CLASS.get(self.opcode)
        if kind is InstructionClass.EXIT:
            return set()
        if kind is InstructionClass.CALL:
            return {self.src} if self.src else set()
        if kind is InstructionClass.LOAD_IMM64:
            return {self.dst}
        if kind is InstructionClass.JUMP and self.opcode == OP_JA:
            return set()
        regs = {self.dst}
        if self.opcode & SRC_X or kind is InstructionClass.LOAD:
            regs.add(self.src)
        if self.opcode & 0x07 == CLS_STX:
            regs.add(self.src)
        return regs


def lddw(dst: int, value: int) -> Instruction:
    return Instruction(OP_LDDW, dst=dst, wide=value)


@dataclass
class Program:
    instructions: list[Instruction]
    program_type: ProgramType = ProgramType.XDP
    name: str = "prog"

    def __post_init__(self):
        self.program_type = ProgramType(self.program_type)

    @property
    def slot_count(self) -> int:
        return sum(insn.width for insn in self.instructions)

    def slot_starts(self) -> list[int]:
        """Slot index at which each instruction begins."""
        starts, slot = [], 0
        for insn in self.instructions:
            starts.append(slot)
            slot += insn.width
        return starts

    def by_slot(self) -> dict[int, Instruction]:
        return dict(zip(self.slot_starts(), self.instructions))

    def encode(self) -> bytes:
        return encode(self.instructions)

    @classmethod
    def from_bytes(cls, data: bytes, program_type=ProgramType.XDP, name="prog"):
        return cls(decode(data), program_type, name)


_SLOT = struct.Struct("<BBhi")


def _check_reg(reg: int, slot: int) -> int:
    if reg > MAX_REG:
        raise BadRegister(f"register r{reg} out of range at slot {slot}")
    return reg


def decode(data: bytes) -> list[Instruction]:
    if len(data) % SLOT_SIZE:
        raise TruncatedProgram(f"length {len(data)} is not a multiple of {SLOT_SIZE}")
    nslots = len(data) // SLOT_SIZE
    out = []
    slot = 0
    while slot < nslots:
        opcode, regs, offset, imm = _SLOT.unpack_from(data, slot * SLOT_SIZE)
        if opcode not in OPCODE_CLASS:
            raise UnknownOpcode(opcode, slot)
        dst = _check_reg(regs & 0x0F, slot)
        src = _check_reg(regs >> 4, slot)
        if opcode == OP_LDDW:
            if slot + 1 >= nslots:
                raise TruncatedProgram(f"wide load at slot {slot} is missing its second slot")
            op2, regs2, off2, hi = _SLOT.unpack_from(data, (slot + 1) * SLOT_SIZE)
            if op2 or regs2 or off2 or src or offset:
                raise MalformedWideLoad(f"malformed wide load at slot {slot}")
            out.append(Instruction(opcode, dst, 0, 0, imm,
                                   wide=(hi << 32) | to_unsigned(imm, 32)))
            slot += 2
        else:
            out.append(Instruction(opcode, dst, src, offset, imm))
            slot += 1
    return out


def _check_range(insn: Instruction, index: int) -> None:
    def bad(what):
        raise RangeError(f"instruction {index}: {what} out of range in {insn}")

    if not 0 <= insn.opcode <= 0xFF:
        bad("opcode")
    if not 0 <= insn.dst <= MAX_REG:
        bad("dst register")
    if not 0 <= insn.src <= MAX_REG:
        bad("src register")
    if not -(1 << 15) <= insn.offset < (1 << 15):
        bad("offset")
    if not -(1 << 31) <= insn.imm < (1 << 31):
        bad("immediate")
    if insn.opcode == OP_LDDW:
        if insn.wide is None or not -(1 << 63) <= insn.wide < (1 << 63):
            bad("wide immediate")
    elif insn.wide is not None:
        bad("wide immediate on a single-slot opcode")


def encode(instructions: Iterable[Instruction]) -> bytes:
    buf = bytearray()
    for index, insn in enumerate(instructions):
        _check_range(insn, index)
        regs = (insn.src << 4) | insn.dst
        if insn.opcode == OP_LDDW:
            wide = to_unsigned(insn.wide, 64)
            buf += _SLOT.pack(insn.opcode, regs, 0, to_signed(wide, 32))
            buf += _SLOT.pack(0, 0, 0, to_signed(wide >> 32, 32))
        else:
            buf += _SLOT.pack(insn.opcode, regs, insn.offset, insn.imm)
    return bytes(buf)


def classify(insn: Instruction) -> InstructionClass:
    try:
        return OPCODE_CLASS[insn.opcode]
    except KeyError:
        raise UnknownOpcode(insn.opcode) from None


def is_memory_access(insn: Instruction) -> bool:
    return OPCODE_CLASS.get(insn.opcode) in (InstructionClass.LOAD, InstructionClass.STORE)


def is_conditional_jump(insn: Instruction) -> bool:
    return OPCODE_CLASS.get(insn.opcode) is InstructionClass.JUMP and insn.opcode != OP_JA


__all__ = [
    "Instruction", "InstructionClass", "Program", "ProgramType",
    "decode", "encode", "classify", "lddw", "is_memory_access",
    "is_conditional_jump", "to_signed", "to_unsigned",
    "SLOT_SIZE", "SCRATCH_ADDR", "SCRATCH_MASK", "FRAME_REG",
    "GUARDED_CALL_MARKER", "OP_CALL", "OP_EXIT", "OP_JA", "OP_LDDW",
]
