import json
import subprocess
import sys

from transientmdp.cli import main
from transientmdp.verify import random_finite_mdp


def run_cli(args):
    return main([str(a) for a in args])


def test_list_gadgets(capsys):
    assert run_cli(["list-gadgets"]) == 0
    out = capsys.readouterr().out
    assert "gamblers_ruin" in out
    assert "no_optimal_ladder" in out


def test_sweep_is_byte_identical(tmp_path, capsys):
    scenario = tmp_path / "sweep.json"
    scenario.write_text(
        json.dumps(
            {
                "seed": 5,
                "mdp": {"gadget": "gamblers_ruin", "params": {"p": 0.5}},
                "task": {
                    "kind": "sweep",
                    "gadget": "gamblers_ruin",
                    "param": "p",
                    "values": [0.4, 0.6, 0.8],
                    "state": 0,
                    "estimate": {
                        "horizon": 800,
                        "runs": 200,
                        "proxy": {"type": "revisit_cap", "max_visits": 25},
                    },
                },
            }
        )
    )
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run_cli(["--out-dir", out1, "run", scenario]) == 0
    assert run_cli(["--out-dir", out2, "run", scenario]) == 0
    assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()
    header = (out1 / "sweep.csv").read_text().splitlines()[0]
    assert header == "p,estimate,half_width_95"


def test_solve_interval_on_gadget(tmp_path, capsys):
    scenario = tmp_path / "solve.json"
    scenario.write_text(
        json.dumps(
            {
                "seed": 1,
                "mdp": {"gadget": "gamblers_ruin", "params": {"p": 0.6}},
                "task": {
                    "kind": "solve",
                    "objective": {"type": "reach", "states": [0]},
                    "state": 1,
                    "radii": [100],
                },
            }
        )
    )
    assert run_cli(["--out-dir", tmp_path, "run", scenario]) == 0
    doc = json.loads((tmp_path / "interval.json").read_text())
    assert abs(doc["lower"] - 2.0 / 3.0) < 1e-4


def test_solve_exact_on_finite_file(tmp_path):
    fm = random_finite_mdp(9, n_states=7)
    fm.dump(tmp_path / "mdp.json")
    scenario = tmp_path / "solve.json"
    scenario.write_text(
        json.dumps(
            {
                "seed": 1,
                "mdp": {"file": str(tmp_path / "mdp.json")},
                "task": {
                    "kind": "solve",
                    "objective": {
                        "type": "reach",
                        "states": [fm.states[-1].ordinal],
                    },
                    "state": 0,
                },
            }
        )
    )
    assert run_cli(["--out-dir", tmp_path, "run", scenario]) == 0
    doc = json.loads((tmp_path / "values.json").read_text())
    assert str(fm.states[-1].ordinal) in doc


def test_synthesize_transience_md_scenario(tmp_path, capsys):
    scenario = tmp_path / "syn.json"
    scenario.write_text(
        json.dumps(
            {
                "seed": 3,
                "mdp": {"gadget": "no_optimal_ladder"},
                "task": {
                    "kind": "synthesize",
                    "method": "transience_md",
                    "state": 1,
                    "epsilon": 0.1,
                    "radius": 40,
                    "proxy": {"type": "revisit_cap", "max_visits": 60},
                },
            }
        )
    )
    assert run_cli(["--out-dir", tmp_path, "run", scenario]) == 0
    strategy = json.loads((tmp_path / "strategy.json").read_text())
    assert strategy  # explicit choices on the truncation
    report = json.loads((tmp_path / "synthesis_report.json").read_text())
    assert report["bad_states"] == [0]  # the bottom sink
    assert report["attained_estimate"] >= 0.9


def test_synthesize_plastering_on_finite_file(tmp_path):
    fm = random_finite_mdp(4, n_states=8)
    fm.dump(tmp_path / "mdp.json")
    scenario = tmp_path / "plaster.json"
    scenario.write_text(
        json.dumps(
            {
                "seed": 1,
                "mdp": {"file": str(tmp_path / "mdp.json")},
                "task": {
                    "kind": "synthesize",
                    "method": "plastering",
                    "epsilon": 0.05,
                    "objective": {"type": "reach", "states": [fm.states[-1].ordinal]},
                },
            }
        )
    )
    assert run_cli(["--out-dir", tmp_path, "run", scenario]) == 0
    audit = json.loads((tmp_path / "plastering_audit.json").read_text())
    assert len(audit["rounds"]) == len(fm.states)


def test_verify_suite_exit_codes(tmp_path, capsys):
    assert run_cli(["--out-dir", tmp_path, "verify", "solvers"]) == 0
    reports = json.loads((tmp_path / "check_reports.json").read_text())
    assert all(r["passed"] for r in reports)


def test_verify_scenario_with_jobs(tmp_path, capsys):
    scenario = tmp_path / "verify.json"
    scenario.write_text(
        json.dumps(
            {
                "seed": 2,
                "task": {"kind": "verify", "suites": ["solvers", "transience"]},
            }
        )
    )
    assert run_cli(["--jobs", 2, "--out-dir", tmp_path, "run", scenario]) == 0
    reports = json.loads((tmp_path / "check_reports.json").read_text())
    names = [r["name"] for r in reports]
    assert names == sorted(names)  # deterministic merge order


def test_bad_scenario_exits_one(tmp_path, capsys):
    scenario = tmp_path / "bad.json"
    scenario.write_text("{not json")
    assert run_cli(["run", scenario]) == 1
    scenario.write_text(json.dumps({"seed": 1, "task": {"kind": "nope"}}))
    assert run_cli(["run", scenario]) == 1


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "transientmdp.cli", "list-gadgets"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "gamblers_ruin" in proc.stdout
