import json
from importlib import resources

import jsonschema
import pytest

from ebpf_sfi.asm import parse_asm
from ebpf_sfi.cli import EXIT_ESCAPE, EXIT_OK, EXIT_PARSE, EXIT_PRECHECK, EXIT_TRAP, main
from ebpf_sfi.isa import decode

from conftest import tcp_packet


def schema(name):
    text = (resources.files("ebpf_sfi") / "schemas" / f"{name}.schema.json").read_text()
    return json.loads(text)


def run_json(capsys, argv, schema_name=None):
    code = main(argv + ["--json"])
    doc = json.loads(capsys.readouterr().out)
    if schema_name:
        jsonschema.validate(doc, schema(schema_name))
    return code, doc


def test_asm_round_trip(tmp_path, capsys):
    src = tmp_path / "p.s"
    src.write_text("mov64 r0, 42\nexit\n")
    code, doc = run_json(capsys, ["asm", str(src)], "asm")
    assert code == EXIT_OK and doc["slots"] == 2
    data = (tmp_path / "p.bin").read_bytes()
    assert len(data) == 16 and decode(data) == parse_asm(src.read_text())


def test_asm_output_flag(tmp_path, capsys):
    src = tmp_path / "p.s"
    src.write_text("lddw r1, 5\nexit\n")
    assert main(["asm", str(src), "-o", str(tmp_path / "x.o")]) == EXIT_OK
    assert len((tmp_path / "x.o").read_bytes()) == 24


def test_asm_syntax_error_line(tmp_path, capsys):
    src = tmp_path / "bad.s"
    src.write_text("mov64 r0, 1\n\nfrobnicate r1\nexit\n")
    assert main(["asm", str(src)]) == EXIT_PARSE
    assert f"{src}:3:" in capsys.readouterr().err
    assert not (tmp_path / "bad.bin").exists()


def test_disasm_sample(capsys):
    assert main(["disasm", "sample:return42"]) == EXIT_OK
    assert "mov64 r0, 42" in capsys.readouterr().out


def test_precheck_ok_and_rejected(capsys):
    code, doc = run_json(capsys, ["precheck", "sample:katran_lb"], "precheck")
    assert code == EXIT_OK and doc["accepted"]
    code, doc = run_json(capsys, ["precheck", "sample:spin"], "precheck")
    assert code == EXIT_PRECHECK and not doc["accepted"]
    assert main(["precheck", "sample:spin", "--allow-loops"]) == EXIT_OK


def test_instrument_stats_match_scan(tmp_path, capsys):
    src = tmp_path / "p.s"
    src.write_text("ldxdw r0, [r1+8]\nstw [r10-4], 1\ncall 1\nexit\n")
    out = tmp_path / "p.sfi"
    code, doc = run_json(capsys, ["instrument", str(src), "-o", str(out),
                                  "--size", "2048", "--base", "0xDEADB800"], "stats")
    assert code == EXIT_OK
    assert (doc["mask_checks"], doc["trampoline_checks"]) == (2, 1)
    assert doc["original_bytes"] == 32 and doc["instrumented_bytes"] == 32 + 2 * 64
    assert len(out.read_bytes()) == doc["instrumented_bytes"]
    assert doc["growth_percent"] == pytest.approx(400.0)


def test_instrument_memory_free_program(tmp_path, capsys):
    src = tmp_path / "p.s"
    src.write_text("mov64 r0, 1\nexit\n")
    code, doc = run_json(capsys, ["instrument", str(src)], "stats")
    assert code == EXIT_OK and doc["growth_percent"] == 0
    main(["instrument", str(src)])
    assert "0.0%" in capsys.readouterr().out


def test_instrument_rejects_oversized(tmp_path, capsys):
    src = tmp_path / "big.s"
    src.write_text("mov64 r0, 0\n" * 4096 + "exit\n")
    assert main(["instrument", str(src)]) == EXIT_PRECHECK
    assert "TooLarge" in capsys.readouterr().err


def test_run_return42(capsys):
    assert main(["run", "sample:return42"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("returned 42")
    code, doc = run_json(capsys, ["run", "sample:return42"], "run")
    assert doc["value"] == 42 and doc["mode"] == "sandboxed"


def test_run_cfi_denied_traps(capsys):
    code, doc = run_json(capsys, ["run", "sample:cfi_denied"], "run")
    assert code == EXIT_TRAP and doc["trap"] == "CfiViolation"


def test_run_policy_file_allows(tmp_path, capsys):
    policy = tmp_path / "policy.json"
    policy.write_text(json.dumps({"xdp": [35]}))
    assert main(["run", "sample:cfi_denied", "--policy", str(policy)]) == EXIT_OK


def test_run_detect_worked_example(capsys):
    code = main(["run", "sample:oob_read", "--detect", "--size", "2048",
                 "--base", "0xDEADB800"])
    assert code == EXIT_OK
    assert "0xdeaf1234 -> 0xdeadba34" in capsys.readouterr().out


def test_run_raw_requires_flag(capsys):
    assert main(["run", "sample:return42", "--mode", "raw"]) == EXIT_PARSE
    assert main(["run", "sample:return42", "--mode", "raw", "--unsafe-raw"]) == EXIT_OK


def test_run_budget_and_trace(capsys):
    code, doc = run_json(capsys, ["run", "sample:spin", "--allow-loops", "--budget", "1000"],
                         "run")
    assert code == EXIT_TRAP and doc["trap"] == "BudgetExhausted"
    assert doc["counters"]["instructions_retired"] == 1000
    code, doc = run_json(capsys, ["run", "sample:return42", "--trace"], "run")
    assert [t["mnemonic"] for t in doc["trace"]] == ["mov64 r0, 42", "exit"]


def test_run_with_payload(tmp_path, capsys):
    payload = tmp_path / "pkt.bin"
    payload.write_bytes(tcp_packet())
    code, doc = run_json(capsys, ["run", "sample:katran_lb", "--payload", str(payload)], "run")
    assert code == EXIT_OK and doc["value"] == 3


def test_bad_arguments(capsys):
    assert main(["run"]) == EXIT_PARSE
    assert main(["run", "sample:nope"]) == EXIT_PARSE
    assert main(["run", "sample:return42", "--size", "100"]) == EXIT_PARSE
    assert main(["run", "sample:return42", "--base", "0x123"]) == EXIT_PARSE
    assert main(["frobnicate"]) == EXIT_PARSE


def test_bench_counts_and_breakdown(tmp_path, capsys):
    code, doc = run_json(capsys, ["bench", "sample:xdp_size_logger", "-n", "3"], "bench")
    assert code == EXIT_OK
    assert doc["counters"]["n_mem"] == doc["injected"]["mask_checks"]
    assert doc["counters"]["n_tram"] == doc["injected"]["trampoline_checks"]
    b = doc["breakdown"]
    assert b["c_overall"] == pytest.approx(b["c_mem"] + b["c_tram"] + b["c_manage"])
    assert len(doc["samples"]["raw_ns"]) == 3 == len(doc["samples"]["sandboxed_ns"])


def test_bench_multiple_payloads(tmp_path, capsys):
    files = []
    for i, n in enumerate((64, 128)):
        f = tmp_path / f"p{i}.bin"
        f.write_bytes(tcp_packet(n))
        files += ["--payload", str(f)]
    code, doc = run_json(capsys, ["bench", "sample:katran_lb", "-n", "2"] + files, "bench")
    assert code == EXIT_OK and doc["payloads"] == 2
    assert len(doc["samples"]["sandboxed_ns"]) == 4
    assert doc["counters"]["n_mem"] < doc["injected"]["mask_checks"]


def test_exploit_suite(capsys):
    code, doc = run_json(capsys, ["exploit-suite"], "exploit")
    assert code == EXIT_OK
    assert doc["all_confined"] and doc["all_raw_effects"] and len(doc["cases"]) >= 5
    assert EXIT_ESCAPE != code
