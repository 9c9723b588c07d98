"""Exception hierarchy.

Load-time problems (decoding, assembling, rewriting, configuration) are
ordinary exceptions.  Run-time faults of an executing program derive from
:class:`Trap` and carry a :class:`TrapReason`; the executor converts them into
a trapped :class:`~ebpf_sfi.executor.ExecutionResult` instead of propagating.
"""

from enum import Enum


class EbpfError(Exception):
    """Base class for every error raised by this package."""


# -- bytecode ---------------------------------------------------------------

class DecodeError(EbpfError):
    pass


class TruncatedProgram(DecodeError):
    pass


class UnknownOpcode(DecodeError):
    def __init__(self, opcode, slot=None):
        where = "" if slot is None else f" at slot {slot}"
        super().__init__(f"unknown opcode {opcode:#04x}{where}")
        self.opcode = opcode
        self.slot = slot


class BadRegister(DecodeError):
    pass


class MalformedWideLoad(DecodeError):
    pass


class RangeError(EbpfError, ValueError):
    """An instruction field does not fit its encoding."""


class AsmSyntaxError(EbpfError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UndefinedLabel(AsmSyntaxError):
    pass


# -- sandbox ----------------------------------------------------------------

class BadSize(EbpfError, ValueError):
    pass


class BadAlignment(EbpfError, ValueError):
    pass


class AllocationFailure(EbpfError):
    pass


class HeapExhausted(EbpfError):
    pass


class ContextTooLarge(EbpfError):
    pass


# -- rewriter / cfi -----------------------------------------------------------

class OffsetOverflow(EbpfError):
    pass


class AlreadyInstrumented(EbpfError):
    pass


class UnknownHelper(EbpfError):
    pass


class TimerUnavailable(EbpfError):
    pass


# -- run-time traps -----------------------------------------------------------

class TrapReason(str, Enum):
    CFI_VIOLATION = "CfiViolation"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    INVALID_RESERVATION = "InvalidReservation"
    ILLEGAL_INSTRUCTION = "IllegalInstruction"
    # raw mode only: an unmasked access hit an unmapped host address
    MEMORY_FAULT = "MemoryFault"

    def __str__(self):
        return self.value


class Trap(EbpfError):
    reason: TrapReason

    def __init__(self, detail=""):
        super().__init__(f"{self.reason.value}: {detail}" if detail else self.reason.value)
        self.detail = detail


class CfiViolation(Trap):
    reason = TrapReason.CFI_VIOLATION


class BudgetExhausted(Trap):
    reason = TrapReason.BUDGET_EXHAUSTED


class InvalidReservation(Trap):
    reason = TrapReason.INVALID_RESERVATION


class IllegalInstruction(Trap):
    reason = TrapReason.ILLEGAL_INSTRUCTION


class MemoryFault(Trap):
    reason = TrapReason.MEMORY_FAULT
