import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tvcontrol.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, grid_chain, main, run_bench
from tvcontrol.control import GridControl, LevelSet, UniformGrid


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_solve_zero_problem_constant_start(tmp_path):
    out = tmp_path / "z"
    code = main(["solve", "--problem", "zero", "--solver", "pg", "--n", "16", "--num-switches", "0", "--out", str(out)])
    assert code == EXIT_OK
    (row,) = read_rows(out / "runs.csv")
    assert row["iterations"] == "1" and float(row["objective"]) == 0.0
    best = json.loads((out / "best.json").read_text())
    assert len(set(best["control"]["kappa"])) == 1


def test_solve_lv_writes_plot_data(tmp_path):
    out = tmp_path / "lv"
    assert main(["solve", "--problem", "lv", "--solver", "tr", "--n", "128", "--seeds", "2", "--out", str(out)]) == EXIT_OK
    rows = read_rows(out / "runs.csv")
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert list(rows[0]) == ["seed", "n", "solver", "objective", "iterations", "wall_time_s"]
    states = read_rows(out / "states.csv")
    assert len(states) == 129
    grad = np.array([float(r["gradient_scaled"]) for r in read_rows(out / "gradient.csv")])
    assert np.abs(grad).max() == pytest.approx(1.0)
    best = json.loads((out / "best.json").read_text())
    assert best["objective"] == min(float(r["objective"]) for r in rows)


def test_solve_is_deterministic_and_parallel_safe(tmp_path):
    args = ["solve", "--problem", "sr", "--solver", "pg", "--n", "64", "--num-switches", "20", "--seeds", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--workers", "2", "--out", str(tmp_path / "b")]) == EXIT_OK
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]
    assert strip(read_rows(tmp_path / "a" / "runs.csv")) == strip(read_rows(tmp_path / "b" / "runs.csv"))
    assert (tmp_path / "a" / "signal.csv").exists()


def test_solve_json_format_and_continuation(tmp_path):
    out = tmp_path / "c"
    assert main(["solve", "--n", "64", "--continue-to", "256", "--num-switches", "8", "--format", "json", "--out", str(out)]) == EXIT_OK
    (run,) = json.loads((out / "runs.json").read_text())
    assert run["n"] == 256 and [lv["n"] for lv in run["levels"]] == [64, 128, 256]


def test_config_errors_exit_2(tmp_path):
    assert main(["solve", "--n", "100", "--continue-to", "400", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--n", "16", "--num-switches", "16", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["bench", "--n-list", "100", "--out", str(tmp_path / "b.csv")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--problem", "nope"])
    assert exc.value.code == 2


def test_numerical_failure_exit_3(tmp_path):
    code = main(["solve", "--problem", "lv", "--n", "8", "--num-switches", "2", "--alpha1", "1e200", "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC


def test_grid_chain():
    assert grid_chain(256, None) == [256]
    assert grid_chain(256, 1024) == [256, 512, 1024]


def _write_result(path, problem, kappa, t_start=0.0, t_end=1.0, levels=(0, 1)):
    u = GridControl(UniformGrid(t_start, t_end, len(kappa)), LevelSet(levels), kappa)
    path.write_text(json.dumps({"problem": problem, "control": u.to_dict()}))


def test_audit_constant_control_is_vacuous(tmp_path):
    res = tmp_path / "const.json"
    _write_result(res, {"name": "lv", "n": 64, "beta": 1e-4}, [0] * 64, t_end=12.0)
    out = tmp_path / "audit.json"
    assert main(["audit", str(res), "--out", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["audit"]["first_order_residuals"] == [] and rep["audit"]["flags"]["first_order"]


def test_audit_second_order_lv_kernel_unavailable(tmp_path, capsys):
    res = tmp_path / "lv.json"
    _write_result(res, {"name": "lv", "n": 16, "beta": 1e-4}, [0] * 8 + [1] * 8, t_end=12.0)
    assert main(["audit", str(res), "--order", "2"]) == EXIT_CONFIG
    assert "kernel unavailable" in capsys.readouterr().err


def test_audit_perturbed_switch_grows_residual(tmp_path):
    out = tmp_path / "sr"
    main(["solve", "--problem", "sr", "--n", "128", "--num-switches", "40", "--out", str(out)])
    best = json.loads((out / "best.json").read_text())
    kappa = np.array(best["control"]["kappa"])
    cuts = np.flatnonzero(np.diff(kappa)) + 1
    c = int(cuts[len(cuts) // 2])
    # move one switch 8 cells to the right, staying inside the neighbouring run when possible
    shifted = kappa.copy()
    shifted[c : c + 8] = kappa[c - 1]
    shifted_doc = {**best, "control": {**best["control"], "kappa": shifted.tolist()}}
    (tmp_path / "shifted.json").write_text(json.dumps(shifted_doc))
    for name in ("base", "shifted"):
        src = out / "best.json" if name == "base" else tmp_path / "shifted.json"
        assert main(["audit", str(src), "--order", "2", "--nonlocal-tests", "--tau-bar", "1", "--out", str(tmp_path / f"{name}.audit")]) == EXIT_OK
    base = json.loads((tmp_path / "base.audit").read_text())["audit"]["flags"]["max_residual"]
    moved = json.loads((tmp_path / "shifted.audit").read_text())
    assert moved["audit"]["flags"]["max_residual"] > base
    assert not moved["audit"]["flags"]["first_order"]


def test_improve_decreases_objective(tmp_path):
    out = tmp_path / "sr"
    main(["solve", "--problem", "sr", "--solver", "pg", "--n", "64", "--num-switches", "20", "--out", str(out)])
    before = json.loads((out / "best.json").read_text())["objective"]
    assert main(["improve", str(out / "best.json"), "--max-rounds", "5", "--out", str(tmp_path / "imp.json")]) == EXIT_OK
    after = json.loads((tmp_path / "imp.json").read_text())
    assert after["objective"] <= before
    assert all(imp["actual"] < 0 for imp in after["improvements"])


def test_improve_lv_needs_explicit_bound(tmp_path):
    res = tmp_path / "lv.json"
    _write_result(res, {"name": "lv", "n": 16, "beta": 1e-4}, [0] * 16, t_end=12.0)
    assert main(["improve", str(res)]) == EXIT_CONFIG
    assert main(["improve", str(res), "--L", "10"]) == EXIT_OK


def test_bench_small(tmp_path):
    rows, slope = run_bench([64, 128, 256], 3, 0.125, LevelSet.range(-2, 3), seed=1)
    assert [r["B"] for r in rows] == [8, 16, 32]
    assert all(r["mean_time_s"] > 0 for r in rows)
    assert np.isfinite(slope)
    out = tmp_path / "bench.csv"
    assert main(["bench", "--n-list", "64", "128", "--reps", "2", "--out", str(out)]) == EXIT_OK
    assert list(read_rows(out)[0]) == ["n", "B", "nB", "mean_time_s", "std_time_s", "cv"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tvcontrol", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "solve" in res.stdout
