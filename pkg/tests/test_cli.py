"""End-to-end runs of the command-line driver."""
from __future__ import annotations

import json
import subprocess
import sys

import pytest

from commarket.cli import run

from conftest import SCENARIO_DIR

TRADE = str(SCENARIO_DIR / "two_entity_trade.json")


def _read(path):
    with open(path) as fh:
        return json.load(fh)


def _stats_template():
    return {
        "time": {"periods": 8, "delta_hours": 1.0},
        "tariffs": {"import": 0.15, "export": 0.035, "peak": 0.1,
                    "reserve": 0.02, "operator_fee": 0.005},
        "entities": [
            {"id": "e1", "devices": [
                {"kind": "nfl", "id": "load", "consumption":
                 {"stats": {"min": 0.0, "max": 5.0, "avg": 2.0, "std": 1.0}}},
            ]},
            {"id": "e2", "devices": [
                {"kind": "nst", "id": "pv", "production":
                 {"stats": {"min": 0.0, "max": 4.0, "avg": 1.5, "std": 1.2}}},
            ]},
            {"id": "e3", "devices": [
                {"kind": "sto", "id": "bat", "cap_max": 6.0, "cap_min": 0.0,
                 "p_charge": 3.0, "p_discharge": 3.0,
                 "eff_charge": 0.9, "eff_discharge": 0.9,
                 "usage_fee": 0.01, "soc_init": 3.0, "soc_final": 3.0},
            ]},
        ],
    }


def test_solve_writes_bundle_and_verifies(tmp_path):
    out = tmp_path / "outcome.json"
    code = run(["solve", "--scenario", TRADE, "--out", str(out),
                "--emit-duals", "--verify"])
    assert code == 0
    bundle = _read(out)
    assert set(bundle) == {"market", "standalone", "sharing"}
    assert abs(bundle["market"]["objective"] - 0.01) < 1e-9
    assert bundle["market"]["duals"]
    assert bundle["sharing"]["alpha"] == pytest.approx(0.0, abs=1e-9)


def test_verify_subcommand_roundtrip(tmp_path):
    out = tmp_path / "outcome.json"
    assert run(["solve", "--scenario", TRADE, "--out", str(out),
                "--emit-duals"]) == 0
    assert run(["verify", "--outcome", str(out), "--scenario", TRADE]) == 0

    doctored = _read(out)
    doctored["market"]["objective"] += 0.1
    bad = tmp_path / "doctored.json"
    bad.write_text(json.dumps(doctored))
    assert run(["verify", "--outcome", str(bad), "--scenario", TRADE]) == 2


def test_verify_requires_duals(tmp_path):
    out = tmp_path / "outcome.json"
    assert run(["solve", "--scenario", TRADE, "--out", str(out)]) == 0
    assert "duals" not in _read(out)["market"]
    assert run(["verify", "--outcome", str(out), "--scenario", TRADE]) == 3


def test_solve_infeasible_exit_code(tmp_path):
    scen = {
        "time": {"periods": 1, "delta_hours": 1.0},
        "tariffs": {"import": 0.15, "export": 0.035, "peak": 0.15,
                    "reserve": 0.0, "operator_fee": 0.01},
        "entities": [
            {"id": "e1", "import_cap": 1.0, "devices": [
                {"kind": "nfl", "id": "load", "consumption": [3.0]}]},
            {"id": "e2", "import_cap": 0.0, "devices": []},
        ],
    }
    path = tmp_path / "starved.json"
    path.write_text(json.dumps(scen))
    out = tmp_path / "outcome.json"
    assert run(["solve", "--scenario", str(path), "--out", str(out)]) == 1
    assert not out.exists()


def test_bad_inputs_exit_code(tmp_path):
    out = tmp_path / "outcome.json"
    assert run(["solve", "--scenario", str(tmp_path / "nope.json"),
                "--out", str(out)]) == 3
    garbled = tmp_path / "garbled.json"
    garbled.write_text("{not json")
    assert run(["solve", "--scenario", str(garbled), "--out", str(out)]) == 3


def test_synth_is_reproducible(tmp_path):
    template = tmp_path / "template.json"
    template.write_text(json.dumps(_stats_template()))
    out1 = tmp_path / "a.json"
    out2 = tmp_path / "b.json"
    assert run(["synth", "--stats", str(template), "--seed", "11",
                "--out", str(out1)]) == 0
    assert run(["synth", "--stats", str(template), "--seed", "11",
                "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    data = _read(out1)
    profile = data["entities"][0]["devices"][0]["consumption"]
    assert len(profile) == 8
    assert all(0.0 <= v <= 5.0 for v in profile)
    # a different seed must actually change the draw
    out3 = tmp_path / "c.json"
    assert run(["synth", "--stats", str(template), "--seed", "12",
                "--out", str(out3)]) == 0
    assert out3.read_bytes() != out1.read_bytes()


def test_horizon_writes_days_ledger_and_reruns_identically(tmp_path):
    run_a = tmp_path / "run_a"
    run_b = tmp_path / "run_b"
    args = ["horizon", "--scenario", TRADE, "--days", "3",
            "--seed", "5", "--emit-duals"]
    assert run(args + ["--out", str(run_a)]) == 0
    assert run(args + ["--out", str(run_b), "--jobs", "2"]) == 0
    for day in (1, 2, 3):
        day_dir = run_a / f"day_{day:03d}"
        assert (day_dir / "scenario.json").exists()
        assert (day_dir / "outcome.json").exists()
        assert _read(day_dir / "verify.json")["ok"] is True
    with open(run_a / "ledger.csv") as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 1 + 3 * 2  # header + days x entities
    assert lines[0].startswith("day,entity,j_su")
    # same seed, same days: the ledger and outcomes are byte-identical,
    # regardless of how many workers produced them
    assert (run_a / "ledger.csv").read_bytes() == \
        (run_b / "ledger.csv").read_bytes()
    assert (run_a / "day_002" / "outcome.json").read_bytes() == \
        (run_b / "day_002" / "outcome.json").read_bytes()


def test_horizon_and_aggregate_on_stats_template(tmp_path):
    template = tmp_path / "template.json"
    template.write_text(json.dumps(_stats_template()))
    out_dir = tmp_path / "run"
    assert run(["horizon", "--scenario", str(template), "--days", "2",
                "--seed", "7", "--out", str(out_dir)]) == 0
    # different days draw different profiles
    s1 = _read(out_dir / "day_001" / "scenario.json")
    s2 = _read(out_dir / "day_002" / "scenario.json")
    assert (s1["entities"][0]["devices"][0]["consumption"]
            != s2["entities"][0]["devices"][0]["consumption"])
    # the storage day-boundary override is applied
    bat = s1["entities"][2]["devices"][0]
    assert bat["soc_init"] == bat["soc_final"] == 3.0

    summary_path = tmp_path / "summary.json"
    assert run(["aggregate", "--in", str(out_dir),
                "--out", str(summary_path)]) == 0
    summary = _read(summary_path)
    assert summary["days"] == 2
    assert summary["entities"] == ["e1", "e2", "e3"]
    assert len(summary["monthly"]) == 1
    month = summary["monthly"][0]
    assert month["month"] == 1 and month["days"] == 2
    assert month["storage_usage_cost"] >= 0.0
    assert month["operator_fee_revenue"] >= 0.0
    for u in ("e1", "e2", "e3"):
        assert summary["yearly"]["gain"][u] >= -1e-9
        assert len(summary["daily_gain_percent"][u]) == 2


def test_horizon_flags_infeasible_day(tmp_path):
    scen = {
        "time": {"periods": 1, "delta_hours": 1.0},
        "tariffs": {"import": 0.15, "export": 0.035, "peak": 0.15,
                    "reserve": 0.0, "operator_fee": 0.01},
        "entities": [
            {"id": "e1", "import_cap": 1.0, "devices": [
                {"kind": "nfl", "id": "load", "consumption": [3.0]}]},
            {"id": "e2", "import_cap": 0.0, "devices": []},
        ],
    }
    template = tmp_path / "starved.json"
    template.write_text(json.dumps(scen))
    out_dir = tmp_path / "run"
    assert run(["horizon", "--scenario", str(template), "--days", "1",
                "--out", str(out_dir)]) == 1
    assert (out_dir / "day_001" / "error.json").exists()
    with open(out_dir / "ledger.csv") as fh:
        assert fh.read().splitlines()[1:] == []


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "commarket.cli", "--help"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "solve" in proc.stdout and "horizon" in proc.stdout
