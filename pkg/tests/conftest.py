"""Shared program generators and reference oracles for the test suite."""

from __future__ import annotations

import random

import pytest

from ebpf_sfi import isa
from ebpf_sfi.isa import Instruction, Program, classify, lddw
from ebpf_sfi.isa import InstructionClass as IC
from ebpf_sfi.helpers import DEFAULT_REGISTRY

ALU_NAMES = ["add", "sub", "mul", "div", "or", "and", "lsh", "rsh", "mod", "xor", "mov", "arsh"]
SIZES = [isa.SIZE_B, isa.SIZE_H, isa.SIZE_W, isa.SIZE_DW]


def tcp_packet(length: int = 64, ports: bytes = b"\x1f\x90\x00\x50") -> bytes:
    """An Ethernet/IPv4/TCP frame as the load-balancer sample expects it."""
    pkt = bytearray(length)
    pkt[12:14] = b"\x08\x00"
    pkt[14] = 0x45
    pkt[23] = 6
    pkt[26:30] = bytes([10, 0, 0, 1])
    pkt[30:34] = bytes([10, 0, 0, 2])
    pkt[34:38] = ports
    return bytes(pkt)


# -- structural random programs (pass precheck, arbitrary memory bases) ----------------

def _alu(rng, regs=range(11)):
    cls = rng.choice([isa.CLS_ALU, isa.CLS_ALU64])
    op = isa.ALU_OPS[rng.choice(ALU_NAMES)]
    dst = rng.choice([r for r in regs if r != 10])
    if rng.random() < 0.5:
        return Instruction(cls | op | isa.SRC_X, dst, rng.choice(list(regs)))
    return Instruction(cls | op | isa.SRC_K, dst, imm=rng.randint(-(1 << 31), (1 << 31) - 1))


def _mem(rng):
    size = rng.choice(SIZES)
    kind = rng.choice([isa.CLS_LDX, isa.CLS_ST, isa.CLS_STX])
    off = rng.randint(-(1 << 15), (1 << 15) - 1)
    if kind == isa.CLS_LDX:
        return Instruction(kind | isa.MODE_MEM | size, rng.randint(0, 9), rng.randint(0, 10), off)
    if kind == isa.CLS_ST:
        return Instruction(kind | isa.MODE_MEM | size, rng.randint(0, 10), 0, off,
                           rng.randint(-1000, 1000))
    return Instruction(kind | isa.MODE_MEM | size, rng.randint(0, 10), rng.randint(0, 10), off)


def random_structural_program(rng: random.Random, n: int = 40) -> Program:
    """Random program accepted by precheck: forward conditional jumps only, one exit.

    Every instruction is reachable by fall-through, so reachability holds by
    construction; jump targets are chosen among later instruction starts.
    """
    helper_ids = DEFAULT_REGISTRY.ids()
    body: list = []
    for _ in range(n):
        r = rng.random()
        if r < 0.35:
            body.append(_mem(rng))
        elif r < 0.45:
            body.append(Instruction(isa.OP_CALL, imm=rng.choice(helper_ids)))
        elif r < 0.55:
            body.append(lddw(rng.randint(0, 9), rng.getrandbits(64)))
        elif r < 0.7:
            body.append("jump")
        else:
            body.append(_alu(rng))
    body.append(Instruction(isa.OP_EXIT))
    return Program(_resolve_jumps(rng, body), rng.choice(list(isa.ProgramType)), "random")


def _resolve_jumps(rng, body):
    starts, slot = [], 0
    for item in body:
        starts.append(slot)
        slot += 2 if isinstance(item, Instruction) and item.opcode == isa.OP_LDDW else 1
    out = []
    for i, item in enumerate(body):
        if item == "jump":
            target = rng.randint(i + 1, len(body) - 1)
            op = rng.choice(list(isa.JMP_OPS.values()))
            cls = rng.choice([isa.CLS_JMP, isa.CLS_JMP32])
            off = starts[target] - (starts[i] + 1)
            if rng.random() < 0.5:
                item = Instruction(cls | op | isa.SRC_X, rng.randint(0, 10), rng.randint(0, 10), off)
            else:
                item = Instruction(cls | op | isa.SRC_K, rng.randint(0, 10), 0, off,
                                   rng.randint(-50, 50))
        out.append(item)
    return out


# -- in-bounds, all-permitted programs (socket_filter context) -----------------------
#
# r9 holds the context pointer, r8 the packet pointer; r0-r7 carry data.  Loads
# and stores address only the stack (via r10), the context scalars (via r9) and
# the first bytes of the packet (via r8), so raw and sandboxed runs must agree.

DATA_REGS = range(8)
PACKET_LEN = 64


def _in_bounds_mem(rng):
    size = rng.choice(SIZES)
    width = isa.SIZE_BYTES[size]
    where = rng.random()
    if where < 0.6:                                    # stack
        base, off = 10, -rng.randrange(width, 256, width)
        can_write = True
    elif where < 0.8:                                  # context scalars len..priority
        base, off = 9, rng.randrange(0, 16 - width + 1, width)
        can_write = True
    else:                                              # packet bytes
        base, off = 8, rng.randrange(0, PACKET_LEN - width + 1, width)
        can_write = True
    kind = rng.choice([isa.CLS_LDX, isa.CLS_ST, isa.CLS_STX]) if can_write else isa.CLS_LDX
    if kind == isa.CLS_LDX:
        return Instruction(kind | isa.MODE_MEM | size, rng.choice(DATA_REGS), base, off)
    if kind == isa.CLS_ST:
        return Instruction(kind | isa.MODE_MEM | size, base, 0, off, rng.randint(-500, 500))
    return Instruction(kind | isa.MODE_MEM | size, base, rng.choice(DATA_REGS), off)


def random_in_bounds_program(rng: random.Random, n: int = 30) -> Program:
    body: list = [
        Instruction(isa.CLS_ALU64 | isa.ALU_OPS["mov"] | isa.SRC_X, 9, 1),
        Instruction(isa.CLS_LDX | isa.MODE_MEM | isa.SIZE_DW, 8, 9, 16),
    ]
    for _ in range(n):
        r = rng.random()
        if r < 0.4:
            body.append(_in_bounds_mem(rng))
        elif r < 0.45:
            body.append(Instruction(isa.OP_CALL, imm=35))
        elif r < 0.5:
            body.append(lddw(rng.choice(DATA_REGS), rng.getrandbits(64)))
        elif r < 0.62:
            body.append("jump")
        else:
            body.append(_alu(rng, DATA_REGS))
    body.append(Instruction(isa.OP_EXIT))
    out = []
    for item in _resolve_jumps(rng, body):
        # keep conditional jumps over data registers only
        if isinstance(item, Instruction) and isa.is_conditional_jump(item):
            item = Instruction(item.opcode, item.dst % 8, item.src % 8, item.offset, item.imm)
        out.append(item)
    return Program(out, isa.ProgramType.SOCKET_FILTER, "in-bounds")


# -- independent scan oracles --------------------------------------------------------

def scan_counts(program: Program) -> tuple[int, int]:
    """(memory accesses, calls) by straightforward classification."""
    mem = sum(1 for i in program.instructions if classify(i) in (IC.LOAD, IC.STORE))
    calls = sum(1 for i in program.instructions if classify(i) is IC.CALL)
    return mem, calls


@pytest.fixture
def rng():
    return random.Random(0x5EED)


# -- acceptance reporting -------------------------------------------------------------

ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
