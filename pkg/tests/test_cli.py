import shutil
from pathlib import Path

import pytest

from preof5g.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
SMALL = SCENARIOS / "baseline_failover.scn"


def test_run_kv_to_file(tmp_path, capsys):
    out = tmp_path / "r.kv"
    assert main(["run", str(SMALL), "--format", "kv", "-o", str(out)]) == EXIT_OK
    text = out.read_text()
    assert "flow.up1.lost=20" in text.splitlines()
    assert capsys.readouterr().out == ""


def test_run_table_and_trace(capsys):
    assert main(["run", str(SMALL), "--trace"]) == EXIT_OK
    captured = capsys.readouterr()
    assert "lat_mean" in captured.out
    assert "trace " in captured.err and "reanchor" in captured.err


def test_seed_override_changes_header(capsys):
    assert main(["run", str(SMALL), "--format", "kv", "--seed", "99"]) == EXIT_OK
    assert "seed=99" in capsys.readouterr().out


def test_invalid_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("[scenario]\nvariant = nonsense\n")
    assert main(["validate", str(bad)]) == EXIT_INVALID
    assert main(["run", str(bad)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "bad.scn:2" in err


def test_validate_ok(capsys):
    assert main(["validate", str(SMALL)]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_compare(tmp_path, capsys):
    a, b = tmp_path / "a.kv", tmp_path / "b.kv"
    main(["run", str(SMALL), "--format", "kv", "-o", str(a)])
    main(["run", str(SMALL), "--format", "kv", "--seed", "1", "-o", str(b)])
    assert main(["compare", str(a), str(b)]) == EXIT_OK
    other = tmp_path / "other.kv"
    main(["run", str(SCENARIOS / "downlink_offload_lossy.scn"), "--format", "kv", "-o", str(other)])
    capsys.readouterr()
    assert main(["compare", str(a), str(other)]) == EXIT_INVALID
    assert main(["compare", str(a), str(tmp_path / "missing.kv")]) == EXIT_RUNTIME


@pytest.mark.parametrize("jobs", ["1", "2"])
def test_sweep(tmp_path, capsys, jobs):
    shutil.copy(SMALL, tmp_path / "one.scn")
    shutil.copy(SCENARIOS / "pti_in_ue_gnb_failure.scn", tmp_path / "two.scn")
    assert main(["sweep", str(tmp_path), "-j", jobs]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("# preof5g report v1") == 2
    (tmp_path / "three.scn").write_text("[scenario]\n")
    assert main(["sweep", str(tmp_path)]) == EXIT_INVALID


def test_sweep_empty_dir(tmp_path):
    assert main(["sweep", str(tmp_path)]) == EXIT_INVALID
