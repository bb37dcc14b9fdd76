import json
import sys
import textwrap

import pytest

import numpy as np

from lolhr.cli import BridgeError, ExternalEvaluator, main

SMALL = {
    "budget": {"m0": 10, "m_s": 3, "steps": 1},
    "moo": {"population": 8, "generations": 3},
    "reliability": {"method": "ds", "directions": 16, "brackets": 8},
    "validation": {"method": "ds", "directions": 16, "brackets": 8},
    "training": {"gp_restarts": 1, "cv_restarts": 1, "svr_levels": 1, "svr_grid": 3},
    "moment_samples": 20,
}


def write_config(tmp_path, name="cfg.json", **fields):
    path = tmp_path / name
    path.write_text(json.dumps({**SMALL, **fields}))
    return str(path)


@pytest.fixture(scope="module")
def ex1_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("runs")
    cfg = write_config(tmp, problem="ex1", strategy="lolhr")
    out = tmp / "out"
    assert main(["run", "--config", cfg, "--seed", "0", "--seed", "1", "--out", str(out)]) == 0
    return tmp, cfg, out


def test_run_writes_artifacts(ex1_runs):
    _, _, out = ex1_runs
    d = out / "ex1" / "seed0"
    rec = json.loads((d / "record.json").read_text())
    assert rec["counts"]["m"] == 13
    assert rec["config"]["run_config"]["problem"] == "ex1"
    assert np.bincount(rec["dataset"]["step"]).tolist() == [10, 3]
    header = (d / "validated_front.csv").read_text().splitlines()[0]
    assert header == "theta_1,theta_2,f_1,f_2,pf,feasible,pareto"
    assert (d / "predicted_front.csv").exists()


def test_records_are_byte_identical(ex1_runs, tmp_path):
    _, cfg, out = ex1_runs
    assert main(["run", "--config", cfg, "--seed", "0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "ex1/seed0/record.json").read_bytes() == (out / "ex1/seed0/record.json").read_bytes()


def test_report_statistics(ex1_runs, capsys, tmp_path):
    _, _, out = ex1_runs
    assert main(["report", str(out), "--out", str(tmp_path / "t.csv")]) == 0
    text = capsys.readouterr().out
    assert "gp-lolhr" in text and "| 2 |" in text
    h = [json.loads((out / f"ex1/seed{s}/record.json").read_text())["hvi"] for s in (0, 1)]
    rows = (tmp_path / "t.csv").read_text().splitlines()
    values = dict(zip(rows[0].split(","), rows[1].split(",")))
    assert float(values["mu_h"]) == pytest.approx(sum(h) / 2, abs=1e-12)
    assert float(values["sigma_h"]) == pytest.approx(abs(h[0] - h[1]) / 2 ** 0.5, abs=1e-12)


def test_report_flags_single_record(ex1_runs, capsys):
    _, _, out = ex1_runs
    assert main(["report", str(out / "ex1/seed0/record.json")]) == 0
    assert "(n=1)" in capsys.readouterr().out


def test_report_rejects_mixed_problems(ex1_runs, tmp_path, capsys):
    _, _, out = ex1_runs
    rec = json.loads((out / "ex1/seed0/record.json").read_text())
    rec["config"]["problem"] = "ex2"
    other = tmp_path / "record.json"
    other.write_text(json.dumps(rec))
    assert main(["report", str(out), str(other)]) == 2
    assert "different problems" in capsys.readouterr().err


def test_validate_records(ex1_runs, tmp_path, capsys):
    tmp, cfg, out = ex1_runs
    assert main(["validate", "--config", cfg, str(out)]) == 0
    rec = json.loads((out / "ex1/seed0/record.json").read_text())
    rec["counts"]["m_F"] += 1
    bad = tmp_path / "record.json"
    bad.write_text(json.dumps(rec))
    assert main(["validate", str(bad)]) == 2
    assert "m_F" in capsys.readouterr().err


def test_set_overrides_and_random_strategy(tmp_path):
    cfg = write_config(tmp_path, problem="ex1", strategy="lolhr")
    assert main(["run", "--config", cfg, "--seed", "4", "--set", "strategy=random",
                 "--set", "budget.m0=12", "--out", str(tmp_path)]) == 0
    rec = json.loads((tmp_path / "ex1/seed4/record.json").read_text())
    assert rec["config"]["strategy"] == "random" and rec["config"]["budget"] == 15


def test_missing_problem_is_a_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", cfg, "--seed", "0"]) == 2
    assert capsys.readouterr().err


def test_invalid_field_is_named(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="ex1", moo={"population": 2})
    assert main(["validate", "--config", cfg]) == 2
    assert "moo/population" in capsys.readouterr().err


def test_malformed_json_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"problem": "ex1",\n "seeds": [1,]}')
    assert main(["validate", "--config", str(path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_seeds_are_required(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="ex1")
    assert main(["run", "--config", cfg]) == 2
    assert "seed" in capsys.readouterr().err


def test_long_direct_run_needs_heavy_flag(tmp_path):
    cfg = write_config(tmp_path, problem="ex1", strategy="direct", direct="long")
    assert main(["run", "--config", cfg, "--seed", "0"]) == 2


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == 2


BRIDGE = textwrap.dedent("""\
    import sys
    rows = [list(map(float, line.split(","))) for line in sys.stdin if line.strip()]
    mode = sys.argv[1]
    if mode == "fail":
        sys.stderr.write("model crashed\\n")
        sys.exit(3)
    for i, (a, b) in enumerate(rows):
        g = "nan" if mode == "nan" and i == 1 else repr(3.0 - a)
        print(f"{a * a + b},{(a - 1) ** 2 + b * b},{g}")
""")


def external_config(tmp_path, mode):
    script = tmp_path / "bridge.py"
    script.write_text(BRIDGE)
    return write_config(tmp_path, f"{mode}.json", external={
        "name": "toy",
        "command": [sys.executable, str(script), mode],
        "inputs": [{"family": "normal", "mean": 0.0, "std": 0.1, "design": True},
                   {"family": "normal", "mean": 0.0, "std": 0.1, "design": True}],
        "objectives": [{"kind": "mean", "response": 0}, {"kind": "mean", "response": 1}],
        "limit_states": [2],
        "n_responses": 3,
        "design_lower": [-1.0, -1.0],
        "design_upper": [1.0, 1.0],
        "target_pf": 0.01,
        "reference_point": [3.0, 6.0],
    })


def test_external_bridge_run(tmp_path):
    cfg = external_config(tmp_path, "ok")
    assert main(["run", "--config", cfg, "--seed", "0", "--out", str(tmp_path / "o")]) == 0
    rec = json.loads((tmp_path / "o/toy/seed0/record.json").read_text())
    assert rec["hvi"] > 0 and rec["counts"]["m"] == 13


def test_external_bridge_failure_reports_stderr(tmp_path, capsys):
    cfg = external_config(tmp_path, "fail")
    assert main(["run", "--config", cfg, "--seed", "0", "--out", str(tmp_path / "o")]) == 1
    assert "model crashed" in capsys.readouterr().err
    assert (tmp_path / "o/toy/seed0/record.partial.json").exists()


def test_external_bridge_nonfinite_row(tmp_path, capsys):
    cfg = external_config(tmp_path, "nan")
    assert main(["run", "--config", cfg, "--seed", "0", "--out", str(tmp_path / "o")]) == 1
    assert "row 1" in capsys.readouterr().err


def test_bridge_echo_preserves_order(tmp_path):
    script = tmp_path / "echo.py"
    script.write_text("import sys\nsys.stdout.write(sys.stdin.read())\n")
    X = np.array([[1.0, 2.0], [3.5, -4.0], [1e-300, 7.0]])
    assert np.array_equal(ExternalEvaluator([sys.executable, str(script)], 2)(X), X)
    with pytest.raises(BridgeError, match="expected 3 values, got 2"):
        ExternalEvaluator([sys.executable, str(script)], 3)(X)


def test_bridge_row_count_mismatch(tmp_path):
    script = tmp_path / "short.py"
    script.write_text("import sys\nprint(sys.stdin.readline().strip())\n")
    with pytest.raises(BridgeError, match="1 rows for 2 inputs"):
        ExternalEvaluator([sys.executable, str(script)], 1)(np.array([[1.0], [2.0]]))
