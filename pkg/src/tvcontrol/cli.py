"""Command-line front end: solve campaigns, the DP benchmark, audits and non-local improvement.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .control import GridControl, LevelSet, UniformGrid, random_switching_control
from .dp import TrInstance, solve_tr_subproblem
from .optimality import (
    KernelUnavailable,
    audit_first_order,
    audit_second_order,
    cell_gradient_curve,
    cell_hessian_kernel,
    fd_hessian_kernel,
    insertion_candidates,
    prox_stationarity,
    removal_candidates,
    switch_insertion_test,
    switch_removal_test,
)
from .problems import LotkaVolterra, SignalReconstruction, StateBlowUp, make_problem, problem_family
from .solvers import PgConfig, TrConfig, proximal_gradient, refine_continuation, trust_region

log = logging.getLogger("tvcontrol")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

RUN_COLUMNS = ["seed", "n", "solver", "objective", "iterations", "wall_time_s"]
BENCH_COLUMNS = ["n", "B", "nB", "mean_time_s", "std_time_s", "cv"]


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------

def problem_config(args) -> dict:
    if args.problem == "lv":
        params = {
            "alpha1": args.alpha1, "alpha2": args.alpha2,
            "gamma1": args.gamma1, "gamma2": args.gamma2,
            "theta1": args.theta1, "theta2": args.theta2,
            "y0": list(args.y0), "T": args.T,
        }
        return {"name": "lv", "n": args.n, "beta": args.beta, "params": params}
    if args.problem == "sr":
        return {
            "name": "sr", "n": args.n, "beta": args.beta, "omega0": args.omega0,
            "t0": args.t0, "tf": args.tf, "gl_nodes": args.gl_nodes,
            "levels": args.levels or [-2, -1, 0, 1, 2],
        }
    return {
        "name": "zero", "n": args.n, "beta": args.beta, "t_start": 0.0,
        "t_end": args.t_end, "levels": args.levels or [0, 1],
    }


def solver_config(args):
    if args.solver == "pg":
        return PgConfig(args.eta, args.theta, args.tau0, args.max_outer or 1000, args.max_backtrack)
    return TrConfig(args.radius0, args.shrink, args.expand, args.acceptance_ratio, args.min_radius, args.max_outer or 10000)


def grid_chain(n: int, finest: Optional[int]) -> list[int]:
    if finest is None:
        return [n]
    if n & (n - 1) or finest & (finest - 1) or finest < n:
        raise ConfigError("continuation needs powers of two with --continue-to >= --n")
    chain = [n]
    while chain[-1] < finest:
        chain.append(chain[-1] * 2)
    return chain


# --- solve -------------------------------------------------------------------

def _run_one(job: dict) -> dict:
    """One seeded run; module-level so it can cross process boundaries."""
    cfg, seed = job["problem"], job["seed"]
    problem = make_problem(cfg)
    u0 = random_switching_control(
        problem.grid, problem.levels, job["num_switches"], seed=seed, allow_equal_segments=job["allow_equal"]
    )
    solver_cfg = PgConfig(**job["solver_cfg"]) if job["solver"] == "pg" else TrConfig(**job["solver_cfg"])
    chain = job["chain"]
    if len(chain) > 1:
        trace = refine_continuation(problem_family(cfg), u0, chain, job["solver"], solver_cfg)
    elif job["solver"] == "pg":
        trace = proximal_gradient(problem, u0, solver_cfg)
    else:
        trace = trust_region(problem, u0, solver_cfg)
    return {
        "seed": seed,
        "n": chain[-1],
        "solver": job["solver"],
        "objective": trace.final_objective,
        "iterations": trace.iterations,
        "wall_time_s": trace.wall_time_s,
        "termination_reason": trace.termination_reason.value,
        "levels": trace.levels,
        "control": trace.final_control.to_dict(),
    }


def _write_rows(path: Path, columns: Sequence[str], rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def write_plot_data(out: Path, problem, u: GridControl):
    """Control, scaled gradient and problem-specific curves as CSV for external plotting."""
    grid = u.grid
    pts = grid.points()
    with open(out / "control.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_left", "t_right", "u"])
        w.writerows(zip(pts[:-1], pts[1:], u.values))
    g = problem.gradient(u)
    scale = np.abs(g).max()
    g_scaled = g / scale if scale > 0 else g
    with open(out / "gradient.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "gradient_scaled"])
        w.writerows(zip(grid.midpoints(), g_scaled))
    if isinstance(problem, LotkaVolterra):
        y = problem.simulate(u)
        with open(out / "states.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "y1", "y2"])
            w.writerows(zip(pts, y[:, 0], y[:, 1]))
    elif isinstance(problem, SignalReconstruction):
        with open(out / "signal.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Ku", "f"])
            w.writerows(zip(pts, problem.convolution(u), problem.ops.f_vec))


def cmd_solve(args) -> int:
    cfg = problem_config(args)
    chain = grid_chain(args.n, args.continue_to)
    solver_cfg = solver_config(args)
    num_switches = args.num_switches
    if num_switches is None:
        num_switches = {"lv": 32, "sr": 128}.get(args.problem, 0)
    if num_switches >= args.n:
        raise ConfigError(f"--num-switches must be below --n ({args.n})")
    if args.seeds < 1:
        raise ConfigError("--seeds must be positive")
    jobs = [
        {
            "problem": cfg, "seed": args.seed + i, "num_switches": num_switches,
            "allow_equal": args.allow_equal_segments, "solver": args.solver,
            "solver_cfg": vars(solver_cfg).copy(), "chain": chain,
        }
        for i in range(args.seeds)
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        _write_rows(out / "runs.csv", RUN_COLUMNS, results)
    else:
        (out / "runs.json").write_text(json.dumps([{k: r[k] for k in RUN_COLUMNS + ["termination_reason", "levels"]} for r in results], indent=1))

    best = min(results, key=lambda r: r["objective"])
    final_cfg = {**cfg, "n": chain[-1]}
    best_doc = {
        "problem": final_cfg,
        "solver": args.solver,
        "seed": best["seed"],
        "objective": best["objective"],
        "termination_reason": best["termination_reason"],
        "levels": best["levels"],
        "control": best["control"],
    }
    (out / "best.json").write_text(json.dumps(best_doc, indent=1))
    write_plot_data(out, make_problem(final_cfg), GridControl.from_dict(best["control"]))

    obj = np.array([r["objective"] for r in results])
    its = np.array([r["iterations"] for r in results])
    print(f"{args.problem}/{args.solver} n={chain[-1]} runs={len(results)}")
    print(f"objective min={obj.min():.6g} max={obj.max():.6g} mean={obj.mean():.6g}")
    print(f"iterations mean={its.mean():.3g}; best seed {best['seed']} -> {out / 'best.json'}")
    return EXIT_OK


# --- bench -------------------------------------------------------------------

def bench_instance(n: int, radius: float, levels: LevelSet, rng: np.random.Generator) -> TrInstance:
    grid = UniformGrid(0.0, 1.0, n)
    v = GridControl(grid, levels, rng.integers(levels.d, size=n))
    return TrInstance(rng.standard_normal(n), v, float(rng.uniform(0.0, 1.0)), radius)


def run_bench(ns: Sequence[int], reps: int, radius: float, levels: LevelSet, seed: int = 0) -> tuple[list[dict], float]:
    """Mean DP wall time per grid size and the log-log slope against nB."""
    rng = np.random.default_rng(seed)
    solve_tr_subproblem(bench_instance(16, radius, levels, rng))  # compile outside the timings
    rows = []
    for n in ns:
        times = []
        for _ in range(reps):
            inst = bench_instance(n, radius, levels, rng)
            t = time.perf_counter()
            solve_tr_subproblem(inst)
            times.append(time.perf_counter() - t)
        times = np.array(times)
        B = TrInstance(np.zeros(n), GridControl.constant(UniformGrid(0.0, 1.0, n), levels, 0), 0.0, radius).budget
        mean, std = float(times.mean()), float(times.std())
        rows.append({"n": n, "B": B, "nB": n * B, "mean_time_s": mean, "std_time_s": std, "cv": std / mean})
        log.info("bench n=%d B=%d mean=%.4gs cv=%.3f", n, B, mean, std / mean)
    x = np.log([r["nB"] for r in rows])
    y = np.log([r["mean_time_s"] for r in rows])
    slope = float(np.polyfit(x, y, 1)[0]) if len(rows) > 1 else math.nan
    return rows, slope


def cmd_bench(args) -> int:
    ns = args.n_list or [2**k for k in range(8, 14)]
    levels = LevelSet.range(*args.levels)
    for n in ns:
        if abs(args.radius * n - round(args.radius * n)) > 1e-9:
            raise ConfigError(f"radius*n must be an integer budget, got {args.radius * n} for n={n}")
    rows, slope = run_bench(ns, args.reps, args.radius, levels, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out, BENCH_COLUMNS, rows)
    for r in rows:
        flag = "" if r["cv"] < 0.2 else "  (cv >= 0.2: timing noise)"
        print(f"n={r['n']:6d} B={r['B']:5d} nB={r['nB']:9d} mean={r['mean_time_s']:.4e}s cv={r['cv']:.3f}{flag}")
    print(f"log-log slope vs nB: {slope:.3f}")
    return EXIT_OK


# --- audit / improve ---------------------------------------------------------

def load_result(path: str):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read result file {path}: {exc}") from None
    if "problem" not in doc or "control" not in doc:
        raise ConfigError("result file needs 'problem' and 'control' entries")
    problem = make_problem(doc["problem"])
    u = GridControl.from_dict(doc["control"])
    if u.grid != problem.grid or u.levels != problem.levels:
        raise ConfigError("control does not match the problem's grid or levels")
    return doc, problem, u


def _lipschitz(problem, L: Optional[float]) -> float:
    if L is not None:
        return L
    if hasattr(problem, "lipschitz_bound"):
        return problem.lipschitz_bound()
    raise ConfigError(f"no certified Lipschitz bound for problem {problem.name!r}; pass --L")


def cmd_audit(args) -> int:
    doc, problem, u = load_result(args.result)
    curve = cell_gradient_curve(problem.grid, problem.gradient(u))
    if args.order == 2:
        cells = problem.hessian_cells(u)
        if cells is not None:
            kernel = cell_hessian_kernel(problem.grid, cells)
        elif args.fd_fallback:
            kernel = fd_hessian_kernel(problem.gradient_at, u)
        else:
            raise KernelUnavailable(f"kernel unavailable for problem {problem.name!r}")
        rep = audit_second_order(u, curve, curve.derivative, kernel, args.tol)
    else:
        rep = audit_first_order(u, curve, args.tol)
    report = {"problem": doc["problem"], "order": args.order, "audit": rep.to_dict()}
    if args.tau_bar is not None:
        ok, checks = prox_stationarity(u, curve, args.tau_bar)
        report["prox_stationarity"] = {"pass": ok, "checks": [vars(c) for c in checks]}
    if args.L is not None or args.nonlocal_tests:
        L = _lipschitz(problem, args.L)
        rem = removal_candidates(u, curve, L, problem.beta, problem.value)
        ins = switch_insertion_test(u, curve, L, problem.beta, problem.value)
        report["nonlocal"] = {
            "L": L,
            "removals": [r.to_dict() | {"control": None} for r in rem],
            "insertion": None if ins is None else ins.to_dict() | {"control": None},
        }
    print(rep.table())
    if "nonlocal" in report:
        print(f"non-local: {len(report['nonlocal']['removals'])} verified removals, "
              f"insertion {'found' if report['nonlocal']['insertion'] else 'none'}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1, default=float))
    return EXIT_OK


def cmd_improve(args) -> int:
    doc, problem, u = load_result(args.result)
    L = _lipschitz(problem, args.L)
    history = []
    for _ in range(args.max_rounds):
        curve = cell_gradient_curve(problem.grid, problem.gradient(u))
        imp = switch_removal_test(u, curve, L, problem.beta, problem.value)
        if imp is None and not args.no_insertion:
            imp = switch_insertion_test(u, curve, L, problem.beta, problem.value)
        if imp is None:
            break
        history.append(imp.to_dict() | {"control": None})
        u = imp.control
        print(f"{imp.kind} on ({imp.window[0]:.6g}, {imp.window[1]:.6g}): change {imp.actual:.4e} (bound {imp.bound:.4e})")
    objective = problem.total(u)
    print(f"{len(history)} improvements; objective {objective:.6g}")
    if args.out:
        out_doc = {**doc, "objective": objective, "control": u.to_dict(), "improvements": history}
        Path(args.out).write_text(json.dumps(out_doc, indent=1, default=float))
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvcontrol", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run a seeded campaign of PG or TR solves")
    s.add_argument("--problem", choices=["lv", "sr", "zero"], default="lv")
    s.add_argument("--solver", choices=["pg", "tr"], default="tr")
    s.add_argument("--n", type=int, default=256)
    s.add_argument("--continue-to", type=int, default=None, help="finest grid of a doubling continuation")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed+i")
    s.add_argument("--num-switches", type=int, default=None, help="default: 32 for lv, 128 for sr, 0 for zero")
    s.add_argument("--allow-equal-segments", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default="results")
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.add_argument("--beta", type=float, default=1e-4)
    s.add_argument("--levels", type=int, nargs="+", default=None)
    g = s.add_argument_group("proximal gradient")
    g.add_argument("--eta", type=float, default=1e-6)
    g.add_argument("--theta", type=float, default=0.5)
    g.add_argument("--tau0", type=float, default=0.01)
    g.add_argument("--max-backtrack", type=int, default=40)
    g = s.add_argument_group("trust region")
    g.add_argument("--radius0", type=float, default=0.4)
    g.add_argument("--shrink", type=float, default=0.5)
    g.add_argument("--expand", type=float, default=2.0)
    g.add_argument("--acceptance-ratio", type=float, default=1e-3)
    g.add_argument("--min-radius", type=float, default=None, help="default: one grid cell")
    s.add_argument("--max-outer", type=int, default=None)
    g = s.add_argument_group("Lotka-Volterra")
    for name, val in [("alpha1", 1.0), ("alpha2", 1.0), ("gamma1", 1.0), ("gamma2", 1.0), ("theta1", 0.4), ("theta2", 0.2)]:
        g.add_argument(f"--{name}", type=float, default=val)
    g.add_argument("--y0", type=float, nargs=2, default=[0.5, 0.7])
    g.add_argument("--T", type=float, default=12.0)
    g = s.add_argument_group("signal reconstruction")
    g.add_argument("--omega0", type=float, default=math.pi)
    g.add_argument("--t0", type=float, default=-1.0)
    g.add_argument("--tf", type=float, default=1.0)
    g.add_argument("--gl-nodes", type=int, default=5)
    s.add_argument("--t-end", type=float, default=1.0, help="horizon of the zero problem")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="time the trust-region DP against n*B")
    b.add_argument("--n-list", type=int, nargs="+", default=None, help="default: 256 ... 8192")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--radius", type=float, default=0.125)
    b.add_argument("--levels", type=int, nargs=2, default=[-2, 23], metavar=("LO", "HI"))
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("audit", help="check optimality conditions of a stored control")
    a.add_argument("result", help="JSON with 'problem' and 'control', e.g. best.json from solve")
    a.add_argument("--order", type=int, choices=[1, 2], default=1)
    a.add_argument("--tol", type=float, default=1e-6)
    a.add_argument("--tau-bar", type=float, default=None, help="also check prox stationarity")
    a.add_argument("--L", type=float, default=None, help="Lipschitz bound; enables the non-local tests")
    a.add_argument("--nonlocal-tests", action="store_true", help="run non-local tests with the certified bound")
    a.add_argument("--fd-fallback", action="store_true", help="finite-difference kernel when none is known")
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_audit)

    i = sub.add_parser("improve", help="apply verified removal/insertion steps until none fires")
    i.add_argument("result")
    i.add_argument("--L", type=float, default=None)
    i.add_argument("--max-rounds", type=int, default=100)
    i.add_argument("--no-insertion", action="store_true")
    i.add_argument("--out", default=None)
    i.set_defaults(func=cmd_improve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, KernelUnavailable, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StateBlowUp, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
