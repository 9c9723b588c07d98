"""Text assembly for eBPF programs.

One instruction per line, lowercase mnemonics::

    start:
        ldxdw r2, [r1+0]      ; comment
        jeq r2, 0, done
        mov64 r0, 1
        ja +1
    done:
        mov64 r0, 0
        exit

Jump targets are either a signed slot offset (``+3``, ``-1``) or a label.
"""

from __future__ import annotations

import re
from typing import Iterable

from . import isa
from .errors import AsmSyntaxError, UndefinedLabel
from .isa import (
    ALU_OPS, CLS_ALU, CLS_ALU64, CLS_JMP, CLS_JMP32, CLS_LDX, CLS_ST, CLS_STX,
    JMP_OPS, MODE_MEM, OP_CALL, OP_EXIT, OP_JA, SIZE_SUFFIX, SRC_K,
    SRC_X, GUARDED_CALL_MARKER, Instruction, InstructionClass,
)

_SIZE_BY_SUFFIX = {v: k for k, v in SIZE_SUFFIX.items()}
_ALU_NAMES = {v: k for k, v in ALU_OPS.items()}
_JMP_NAMES = {v: k for k, v in JMP_OPS.items()}

_LABEL_RE = re.compile(r"^([A-Za-z_.][\w.]*)\s*:")
_REG_RE = re.compile(r"^r(\d+)$")
_MEM_RE = re.compile(r"^\[\s*r(\d+)\s*(?:([+-])\s*([0-9a-fA-Fx]+))?\s*\]$")
_ALU_RE = re.compile(r"^(%s)(32|64)$" % "|".join(ALU_OPS))
_JMP_RE = re.compile(r"^(%s)(32)?$" % "|".join(JMP_OPS))
_LDST_RE = re.compile(r"^(ldx|stx|st)(dw|w|h|b)$")


def _strip(line: str) -> str:
    return line.split(";", 1)[0].replace("−", "-").strip()


def _reg(text, lineno):
    m = _REG_RE.match(text)
    if not m or int(m.group(1)) > isa.MAX_REG:
        raise AsmSyntaxError(f"expected register, got {text!r}", lineno)
    return int(m.group(1))


def _int(text, lineno):
    try:
        return int(text, 0)
    except ValueError:
        raise AsmSyntaxError(f"expected integer, got {text!r}", lineno) from None


def _imm32(text, lineno):
    value = _int(text, lineno)
    if not -(1 << 31) <= value < (1 << 32):
        raise AsmSyntaxError(f"immediate {text} does not fit 32 bits", lineno)
    return isa.to_signed(value, 32)


def _mem(text, lineno):
    m = _MEM_RE.match(text.replace(" ", ""))
    if not m:
        raise AsmSyntaxError(f"expected memory operand [rN+off], got {text!r}", lineno)
    reg = int(m.group(1))
    if reg > isa.MAX_REG:
        raise AsmSyntaxError(f"register r{reg} out of range", lineno)
    off = 0
    if m.group(3):
        off = _int(m.group(3), lineno)
        if m.group(2) == "-":
            off = -off
    if not -(1 << 15) <= off < (1 << 15):
        raise AsmSyntaxError(f"offset {off} does not fit 16 bits", lineno)
    return reg, off


def _operands(rest: str, count: int, mnemonic: str, lineno: int) -> list[str]:
    ops = [o.strip() for o in rest.split(",")] if rest else []
    if len(ops) != count or any(not o for o in ops):
        raise AsmSyntaxError(f"{mnemonic} takes {count} operand(s)", lineno)
    return ops


def _is_reg(text):
    return _REG_RE.match(text) is not None


def parse_asm(text: str) -> list[Instruction]:
    """Assemble ``text`` into instructions, resolving labels to slot offsets."""
    # first pass: labels -> slot index, instruction lines with their slot
    labels: dict[str, int] = {}
    pending = []
    slot = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        while True:
            m = _LABEL_RE.match(line)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise AsmSyntaxError(f"duplicate label {name!r}", lineno)
            labels[name] = slot
            line = line[m.end():].strip()
        if not line:
            continue
        mnemonic, _, rest = line.partition(" ")
        pending.append((lineno, slot, mnemonic.lower(), rest.strip()))
        slot += 2 if mnemonic.lower() == "lddw" else 1

    out = []
    for lineno, slot, mnemonic, rest in pending:
        out.append(_parse_one(mnemonic, rest, slot, labels, lineno))
    return out


def _target(text, slot, labels, lineno):
    if re.match(r"^[+-]?\d+$", text):
        off = int(text)
    elif text in labels:
        off = labels[text] - (slot + 1)
    elif re.match(r"^[A-Za-z_.][\w.]*$", text):
        raise UndefinedLabel(f"undefined label {text!r}", lineno)
    else:
        raise AsmSyntaxError(f"bad jump target {text!r}", lineno)
    if not -(1 << 15) <= off < (1 << 15):
        raise AsmSyntaxError(f"jump offset {off} does not fit 16 bits", lineno)
    return off


def _parse_one(mnemonic, rest, slot, labels, lineno) -> Instruction:
    if mnemonic == "exit":
        _operands(rest, 0, mnemonic, lineno)
        return Instruction(OP_EXIT)
    if mnemonic in ("call", "call.guarded"):
        (helper,) = _operands(rest, 1, mnemonic, lineno)
        src = GUARDED_CALL_MARKER if mnemonic == "call.guarded" else 0
        return Instruction(OP_CALL, src=src, imm=_imm32(helper, lineno))
    if mnemonic == "ja":
        (target,) = _operands(rest, 1, mnemonic, lineno)
        return Instruction(OP_JA, offset=_target(target, slot, labels, lineno))
    if mnemonic == "lddw":
        dst, value = _operands(rest, 2, mnemonic, lineno)
        value = _int(value, lineno)
        if not -(1 << 63) <= value < (1 << 64):
            raise AsmSyntaxError("lddw immediate does not fit 64 bits", lineno)
        return isa.lddw(_reg(dst, lineno), value)

    m = _ALU_RE.match(mnemonic)
    if m:
        cls = CLS_ALU64 if m.group(2) == "64" else CLS_ALU
        op = ALU_OPS[m.group(1)]
        if m.group(1) == "neg":
            (dst,) = _operands(rest, 1, mnemonic, lineno)
            return Instruction(cls | op | SRC_K, dst=_reg(dst, lineno))
        dst, operand = _operands(rest, 2, mnemonic, lineno)
        if _is_reg(operand):
            return Instruction(cls | op | SRC_X, dst=_reg(dst, lineno), src=_reg(operand, lineno))
        return Instruction(cls | op | SRC_K, dst=_reg(dst, lineno), imm=_imm32(operand, lineno))

    m = _JMP_RE.match(mnemonic)
    if m:
        cls = CLS_JMP32 if m.group(2) else CLS_JMP
        dst, operand, target = _operands(rest, 3, mnemonic, lineno)
        off = _target(target, slot, labels, lineno)
        op = cls | JMP_OPS[m.group(1)]
        if _is_reg(operand):
            return Instruction(op | SRC_X, dst=_reg(dst, lineno),
                               src=_reg(operand, lineno), offset=off)
        return Instruction(op | SRC_K, dst=_reg(dst, lineno), offset=off,
                           imm=_imm32(operand, lineno))

    m = _LDST_RE.match(mnemonic)
    if m:
        kind, size = m.group(1), _SIZE_BY_SUFFIX[m.group(2)]
        a, b = _operands(rest, 2, mnemonic, lineno)
        if kind == "ldx":
            base, off = _mem(b, lineno)
            return Instruction(CLS_LDX | MODE_MEM | size, dst=_reg(a, lineno), src=base, offset=off)
        base, off = _mem(a, lineno)
        if kind == "stx":
            return Instruction(CLS_STX | MODE_MEM | size, dst=base, src=_reg(b, lineno), offset=off)
        return Instruction(CLS_ST | MODE_MEM | size, dst=base, offset=off, imm=_imm32(b, lineno))

    raise AsmSyntaxError(f"unknown mnemonic {mnemonic!r}", lineno)


def _signed_off(off: int) -> str:
    return f"+{off}" if off >= 0 else str(off)


def _mem_operand(reg: int, off: int) -> str:
    return f"[r{reg}{_signed_off(off)}]"


def format_instruction(insn: Instruction) -> str:
    """Render one instruction in the assembly syntax accepted by parse_asm."""
    kind = isa.classify(insn)
    op = insn.opcode
    if kind is InstructionClass.EXIT:
        return "exit"
    if kind is InstructionClass.CALL:
        return f"call.guarded {insn.imm}" if insn.is_guarded_call else f"call {insn.imm}"
    if kind is InstructionClass.LOAD_IMM64:
        return f"lddw r{insn.dst}, {isa.to_unsigned(insn.wide, 64):#x}"
    if kind is InstructionClass.ALU:
        bits = "64" if op & 0x07 == CLS_ALU64 else "32"
        name = _ALU_NAMES[op & 0xF0]
        if name == "neg":
            return f"neg{bits} r{insn.dst}"
        operand = f"r{insn.src}" if op & SRC_X else str(insn.imm)
        return f"{name}{bits} r{insn.dst}, {operand}"
    if kind is InstructionClass.LOAD:
        return f"ldx{SIZE_SUFFIX[op & 0x18]} r{insn.dst}, {_mem_operand(insn.src, insn.offset)}"
    if kind is InstructionClass.STORE:
        suffix = SIZE_SUFFIX[op & 0x18]
        if op & 0x07 == CLS_STX:
            return f"stx{suffix} {_mem_operand(insn.dst, insn.offset)}, r{insn.src}"
        return f"st{suffix} {_mem_operand(insn.dst, insn.offset)}, {insn.imm}"
    # jumps
    if op == OP_JA:
        return f"ja {_signed_off(insn.offset)}"
    name = _JMP_NAMES[op & 0xF0] + ("32" if op & 0x07 == CLS_JMP32 else "")
    operand = f"r{insn.src}" if op & SRC_X else str(insn.imm)
    return f"{name} r{insn.dst}, {operand}, {_signed_off(insn.offset)}"


def disassemble(instructions: Iterable[Instruction]) -> str:
    return "\n".join(format_instruction(i) for i in instructions) + "\n"


__all__ = ["parse_asm", "format_instruction", "disassemble"]

