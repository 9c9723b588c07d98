"""Command-line front end.

Subcommands::

    asm            assemble a text program into bytecode
    precheck       run the load-time structural checks
    instrument     rewrite a program and report the injected checks
    run            execute a program once (sandboxed unless --unsafe-raw)
    bench          time raw vs. sandboxed execution and report the cost breakdown
    exploit-suite  run the bundled out-of-bounds corpus

Programs are read from ``.s``/``.asm`` text files, from raw bytecode files, or
from the bundled samples as ``sample:NAME``.

Exit codes: 0 ok, 1 parse/configuration error, 2 precheck rejection,
3 trap, 4 sandbox escape.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from . import __version__, cfi
from .asm import format_instruction, parse_asm
from .errors import AsmSyntaxError, EbpfError, TimerUnavailable
from .executor import DEFAULT_BUDGET, UNIT_COST_MODEL, Mode, account, calibrate, execute
from .exploits import run_suite
from .helpers import ContextDescriptor, ContextInput, standard_kernel
from .isa import Program, ProgramType, decode
from .loader import Limits, precheck
from .rewriter import instrument, size_report
from .sandbox import DEFAULT_SIZE, create_sandbox

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_PRECHECK = 2
EXIT_TRAP = 3
EXIT_ESCAPE = 4

SAMPLE_TYPES = {
    "xdp_size_logger": "xdp",
    "sockfilter_ringbuf": "socket_filter",
    "katran_lb": "xdp",
    "oob_read": "socket_filter",
    "cfi_denied": "xdp",
    "return42": "xdp",
    "spin": "xdp",
}


class UsageError(Exception):
    """Bad configuration; reported with exit status 1."""


@dataclass
class RunConfig:
    program: str
    program_type: Optional[str] = None
    mode: str = Mode.SANDBOXED.value
    size: int = DEFAULT_SIZE
    base: Optional[int] = None
    budget: int = DEFAULT_BUDGET
    policy: Optional[str] = None
    ctx: Optional[str] = None
    payload: Optional[str] = None
    detect: bool = False
    unsafe_raw: bool = False
    allow_loops: bool = False
    trace: bool = False
    output: str = "text"

    def __post_init__(self):
        Mode(self.mode)
        if self.mode == Mode.RAW.value and not self.unsafe_raw:
            raise UsageError("raw mode disables confinement; pass --unsafe-raw to allow it")
        if self.budget < 1:
            raise UsageError("--budget must be positive")

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        return cls(program=args.program, program_type=args.type, mode=args.mode,
                   size=args.size, base=args.base, budget=args.budget, policy=args.policy,
                   ctx=args.ctx, payload=args.payload, detect=args.detect,
                   unsafe_raw=args.unsafe_raw, allow_loops=args.allow_loops,
                   trace=args.trace, output="json" if args.json else "text")


# -- program loading ---------------------------------------------------------

def sample_names() -> list[str]:
    return sorted(SAMPLE_TYPES)


def sample_source(name: str) -> str:
    if name not in SAMPLE_TYPES:
        raise UsageError(f"unknown sample {name!r} (have: {', '.join(sample_names())})")
    return resources.files("ebpf_sfi").joinpath("samples", f"{name}.s").read_text()


def load_program(path: str, program_type: Optional[str] = None) -> Program:
    if path.startswith("sample:"):
        name = path.split(":", 1)[1]
        text = sample_source(name)
        return Program(parse_asm(text), program_type or SAMPLE_TYPES[name], name)
    p = Path(path)
    ptype = program_type or ProgramType.XDP.value
    if p.suffix in (".s", ".asm"):
        return Program(parse_asm(p.read_text()), ptype, p.stem)
    return Program(decode(p.read_bytes()), ptype, p.stem)


def _limits(args) -> Limits:
    return Limits(allow_back_edges=args.allow_loops)


def _table(policy_path: Optional[str]) -> cfi.CapabilityTable:
    if policy_path is None:
        return cfi.default_table()
    return cfi.build_capability_table(cfi.load_policy(policy_path))


def _context(program_type, ctx_path: Optional[str], payload: bytes) -> ContextInput:
    if ctx_path is None:
        return ContextInput.for_packet(program_type, payload)
    descriptor = ContextDescriptor.load(ctx_path)
    regions = {}
    for i, name in enumerate(descriptor.region_names()):
        # the payload fills the first region; the rest start zeroed
        regions[name] = bytearray(payload) if i == 0 else bytearray(
            max(f.region_len for f in descriptor.region_fields() if f.region_name == name))
    return ContextInput(descriptor, bytearray(descriptor.total_len), regions)


def _emit(args, doc: dict, text: str) -> None:
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(text)


def _report_rejection(report) -> None:
    for v in report.violations:
        print(f"  slot {v.instruction_index}: {v.code.value}: {v.detail}", file=sys.stderr)


# -- subcommands -------------------------------------------------------------

def cmd_asm(args) -> int:
    try:
        instructions = parse_asm(Path(args.source).read_text())
    except AsmSyntaxError as exc:
        print(f"{args.source}:{exc.line}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    program = Program(instructions, ProgramType.XDP, Path(args.source).stem)
    output = Path(args.output) if args.output else Path(args.source).with_suffix(".bin")
    output.write_bytes(program.encode())
    _emit(args, {"output": str(output), "slots": program.slot_count},
          f"{output}: {program.slot_count} slots")
    return EXIT_OK


def cmd_precheck(args) -> int:
    program = load_program(args.program, args.type)
    report = precheck(program, _limits(args))
    lines = [f"{program.name}: {'accepted' if report.accepted else 'rejected'}"]
    lines += [f"  slot {v.instruction_index}: {v.code.value}: {v.detail}"
              for v in report.violations]
    _emit(args, report.to_dict(), "\n".join(lines))
    return EXIT_OK if report.accepted else EXIT_PRECHECK


def cmd_instrument(args) -> int:
    program = load_program(args.program, args.type)
    report = precheck(program, _limits(args))
    if not report.accepted:
        print(f"{program.name}: rejected by precheck", file=sys.stderr)
        _report_rejection(report)
        if args.json:
            print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return EXIT_PRECHECK
    sandbox = create_sandbox(args.size, base=args.base)
    out = instrument(program, sandbox.masks)
    if args.output:
        Path(args.output).write_bytes(out.encode())
    _emit(args, out.injected.to_dict(), size_report(out.injected))
    return EXIT_OK


def _format_result(result, config: RunConfig) -> str:
    lines = [result.describe()]
    c = result.counters
    lines.append(f"counters: mask_executed={c.mask_executed} "
                 f"trampoline_executed={c.trampoline_executed} "
                 f"instructions_retired={c.instructions_retired}")
    b = result.breakdown
    lines.append(f"cost: c_mem={b.c_mem:g} c_tram={b.c_tram:g} c_manage={b.c_manage:g} "
                 f"c_overall={b.c_overall:g}")
    for e in result.confinement_events:
        lines.append(f"confined: slot {e.instruction_index} "
                     f"{e.original_address:#x} -> {e.masked_address:#x}")
    if config.trace and result.trace:
        lines.append("trace:")
        lines += [str(t) for t in result.trace]
    return "\n".join(lines)


def cmd_run(args) -> int:
    config = RunConfig.from_args(args)
    program = load_program(config.program, config.program_type)
    report = precheck(program, _limits(args))
    if not report.accepted:
        print(f"{program.name}: rejected by precheck", file=sys.stderr)
        _report_rejection(report)
        return EXIT_PRECHECK
    sandbox = create_sandbox(config.size, base=config.base)
    payload = Path(config.payload).read_bytes() if config.payload else bytes(64)
    context = _context(program.program_type, config.ctx, payload)
    runnable = program if config.mode == Mode.RAW.value else instrument(program, sandbox.masks)
    result = execute(runnable, sandbox, context=context, kernel=standard_kernel(),
                     table=_table(config.policy), budget=config.budget, mode=config.mode,
                     detect=config.detect, trace=config.trace)
    doc = result.to_dict()
    doc["mode"] = config.mode
    doc["program"] = program.name
    if config.trace:
        doc["trace"] = [{"slot": t.slot, "origin": t.origin, "mnemonic": t.mnemonic}
                        for t in result.trace or []]
    _emit(args, doc, _format_result(result, config))
    return EXIT_OK if result.returned else EXIT_TRAP


def _time_run(fn) -> tuple[int, object]:
    start = time.perf_counter_ns()
    result = fn()
    return time.perf_counter_ns() - start, result


def cmd_bench(args) -> int:
    if args.iterations < 1:
        raise UsageError("--iterations must be at least 1")
    program = load_program(args.program, args.type)
    report = precheck(program, _limits(args))
    if not report.accepted:
        _report_rejection(report)
        return EXIT_PRECHECK
    try:
        model, calibrated = calibrate(), True
    except TimerUnavailable:
        model, calibrated = UNIT_COST_MODEL, False
    payloads = [Path(p).read_bytes() for p in args.payload_files] or [bytes(64)]
    sandbox = create_sandbox(args.size, base=args.base)
    instrumented = instrument(program, sandbox.masks)
    table = _table(args.policy)

    def once(runnable, mode, payload):
        return execute(runnable, sandbox, kernel=standard_kernel(), table=table,
                       context=_context(program.program_type, args.ctx, payload),
                       budget=args.budget, mode=mode)

    raw_ns, sandboxed_ns = [], []
    last = None
    for _ in range(args.iterations):
        for payload in payloads:
            t, _r = _time_run(lambda: once(program, Mode.RAW, payload))
            raw_ns.append(t)
            t, last = _time_run(lambda: once(instrumented, Mode.SANDBOXED, payload))
            sandboxed_ns.append(t)
    breakdown = account(last.counters, model)
    doc = {
        "program": program.name,
        "iterations": args.iterations,
        "payloads": len(payloads),
        "calibrated": calibrated,
        "cost_model": {"unit_mask_cost": model.unit_mask_cost,
                       "unit_trampoline_cost": model.unit_trampoline_cost,
                       "manage_cost": model.manage_cost},
        "injected": instrumented.injected.to_dict(),
        "counters": {"n_mem": last.counters.mask_executed,
                     "n_tram": last.counters.trampoline_executed,
                     "instructions_retired": last.counters.instructions_retired},
        "breakdown": {"c_mem": breakdown.c_mem, "c_tram": breakdown.c_tram,
                      "c_manage": breakdown.c_manage, "c_overall": breakdown.c_overall},
        "raw_mean_ns": statistics.fmean(raw_ns),
        "sandboxed_mean_ns": statistics.fmean(sandboxed_ns),
        "samples": {"raw_ns": raw_ns, "sandboxed_ns": sandboxed_ns},
    }
    text = "\n".join([
        f"{program.name}: {args.iterations} iteration(s) x {len(payloads)} payload(s)"
        + ("" if calibrated else " (timer too coarse; unit cost model)"),
        f"raw mean        {doc['raw_mean_ns']:12.0f} ns",
        f"sandboxed mean  {doc['sandboxed_mean_ns']:12.0f} ns",
        f"checks: injected mask={instrumented.injected.mask_checks} "
        f"trampoline={instrumented.injected.trampoline_checks}; "
        f"executed mask={last.counters.mask_executed} "
        f"trampoline={last.counters.trampoline_executed}",
        f"cost (ns): c_mem={breakdown.c_mem:.1f} c_tram={breakdown.c_tram:.1f} "
        f"c_manage={breakdown.c_manage:.1f} c_overall={breakdown.c_overall:.1f}",
    ])
    _emit(args, doc, text)
    return EXIT_OK


def cmd_exploit_suite(args) -> int:
    outcomes = run_suite(args.size, args.base)
    doc = {"cases": [o.to_dict() for o in outcomes],
           "all_confined": all(o.confined for o in outcomes),
           "all_raw_effects": all(o.raw_effect for o in outcomes)}
    lines = []
    for o in outcomes:
        verdict = "confined" if o.confined else "ESCAPED"
        raw = o.case.expected_raw_outcome if o.raw_effect else "no raw effect"
        lines.append(f"{o.case.name:24s} raw: {raw:20s} sandboxed: {verdict:9s} "
                     f"({o.sandboxed.describe()})")
        lines += [f"    {f}" for f in o.findings]
    _emit(args, doc, "\n".join(lines))
    return EXIT_OK if doc["all_confined"] and doc["all_raw_effects"] else EXIT_ESCAPE


def cmd_disasm(args) -> int:
    program = load_program(args.program, args.type)
    slot = 0
    for insn in program.instructions:
        print(f"{slot:5d}  {format_instruction(insn)}")
        slot += insn.width
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

GLOBAL_DEFAULTS = {
    "size": DEFAULT_SIZE, "base": None, "budget": DEFAULT_BUDGET, "policy": None,
    "ctx": None, "json": False, "detect": False, "unsafe_raw": False, "allow_loops": False,
}


def _int(text: str) -> int:
    return int(text, 0)


def _global_options() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand without
    # the subparser's defaults clobbering values given earlier
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--size", type=_int, help="power-of-two sandbox bytes (default 4096)")
    p.add_argument("--base", type=_int, help="sandbox base address (size-aligned)")
    p.add_argument("--budget", type=_int, help="instruction budget (default 1000000)")
    p.add_argument("--policy", help="JSON capability policy file")
    p.add_argument("--ctx", help="JSON context descriptor file")
    p.add_argument("--json", action="store_true", help="emit JSON")
    p.add_argument("--detect", action="store_true", help="record confinement events")
    p.add_argument("--unsafe-raw", action="store_true",
                   help="permit unconfined raw-mode execution")
    p.add_argument("--allow-loops", action="store_true", help="accept back edges")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="ebpf-sfi", parents=[common],
                                     description="Software fault isolation for eBPF-like "
                                                 "bytecode: rewrite, confine and run.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    types = [t.value for t in ProgramType]

    p = sub.add_parser("asm", parents=[common], help="assemble text into bytecode")
    p.add_argument("source")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("disasm", parents=[common], help="print a program's instructions")
    p.add_argument("program")
    p.add_argument("--type", choices=types)
    p.set_defaults(func=cmd_disasm)

    p = sub.add_parser("precheck", parents=[common], help="run the load-time checks")
    p.add_argument("program")
    p.add_argument("--type", choices=types)
    p.set_defaults(func=cmd_precheck)

    p = sub.add_parser("instrument", parents=[common], help="rewrite with masks and guards")
    p.add_argument("program")
    p.add_argument("--type", choices=types)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_instrument)

    p = sub.add_parser("run", parents=[common], help="execute a program once")
    p.add_argument("program")
    p.add_argument("--type", choices=types)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.SANDBOXED.value)
    p.add_argument("--payload", help="packet bytes file")
    p.add_argument("--trace", action="store_true", help="print every retired instruction")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="time raw vs. sandboxed execution")
    p.add_argument("program")
    p.add_argument("--type", choices=types)
    p.add_argument("-n", "--iterations", type=int, default=100)
    p.add_argument("--payload", dest="payload_files", action="append", default=[],
                   help="packet bytes file (repeatable)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("exploit-suite", parents=[common], help="run the OOB exploit corpus")
    p.set_defaults(func=cmd_exploit_suite)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    for name, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, value)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except AsmSyntaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (UsageError, EbpfError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
