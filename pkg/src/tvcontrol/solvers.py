"""Outer loops: proximal gradient, trust region, and grid-refinement continuation."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .control import GridControl, distances, prolong, tv_discrete
from .dp import ProxInstance, TrInstance, solve_prox_subproblem, solve_tr_subproblem
from .problems import Objective

log = logging.getLogger(__name__)

PREDICTED_ZERO_TOL = 1e-12


class Termination(str, enum.Enum):
    FIXED_POINT = "fixed_point"
    MAX_ITER = "max_iter"
    RADIUS_FLOOR = "radius_floor"
    PREDICTED_ZERO = "predicted_zero"
    BACKTRACK_EXHAUSTED = "backtrack_exhausted"


@dataclass
class PgConfig:
    eta: float = 1e-6
    theta: float = 0.5
    tau0: float = 0.01
    max_outer: int = 1000
    max_backtrack: int = 40

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.eta <= 0 or self.tau0 <= 0:
            raise ValueError("eta and tau0 must be positive")


@dataclass
class TrConfig:
    radius0: float = 0.4
    shrink: float = 0.5
    expand: float = 2.0
    acceptance_ratio: float = 1e-3
    min_radius: Optional[float] = None  # None: one grid cell
    max_outer: int = 10000

    def __post_init__(self):
        if self.radius0 <= 0:
            raise ValueError("radius0 must be positive")
        if not 0 < self.shrink < 1 or self.expand <= 1:
            raise ValueError("need 0 < shrink < 1 < expand")
        if not 0 < self.acceptance_ratio < 1:
            raise ValueError("acceptance_ratio must lie in (0, 1)")
        if self.min_radius is not None and not 0 < self.min_radius <= self.radius0:
            raise ValueError("need 0 < min_radius <= radius0")


@dataclass
class IterationRecord:
    iteration: int
    objective: float  # F + beta*TV of the candidate
    F: float
    tv: float
    step_norm_l2: float
    tau_or_radius: float
    accepted: bool
    subproblem_objective: float
    decrease_margin: float = float("nan")  # PG: drop - eta*||step||^2, nonnegative when accepted


@dataclass
class SolveTrace:
    iterates: list[IterationRecord]
    final_control: GridControl
    termination_reason: Termination
    initial_objective: float = float("nan")
    wall_time_s: float = 0.0
    levels: list[dict] = field(default_factory=list)  # per-grid summary for continuation

    @property
    def final_objective(self) -> float:
        accepted = [r.objective for r in self.iterates if r.accepted]
        return accepted[-1] if accepted else self.initial_objective

    @property
    def iterations(self) -> int:
        return len(self.iterates)

    def accepted_objectives(self) -> list[float]:
        return [self.initial_objective] + [r.objective for r in self.iterates if r.accepted]

    def to_dict(self) -> dict:
        return {
            "termination_reason": self.termination_reason.value,
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
            "levels": self.levels,
            "iterates": [asdict(r) for r in self.iterates],
            "final_control": self.final_control.to_dict(),
        }


@dataclass
class _Candidate:
    control: GridControl
    F: float
    tv: float
    objective: float
    step_l2: float
    sub_objective: float
    margin: float

    @property
    def decrease_ok(self) -> bool:
        return self.margin >= 0


def proximal_gradient(problem: Objective, u0: GridControl, cfg: PgConfig = PgConfig()) -> SolveTrace:
    """Proximal-gradient method with the sufficient-decrease step-size search.

    The inverse step length search starts from the last accepted value: if the
    decrease condition fails, tau is divided by theta until it holds; if it holds
    right away, tau is multiplied by theta as long as it keeps holding.
    """
    t_start = time.perf_counter()
    beta, grid = problem.beta, problem.grid
    u = u0
    F_u = problem.value(u)
    tv_u = tv_discrete(u)
    J_u = F_u + beta * tv_u
    trace = SolveTrace([], u0, Termination.MAX_ITER, initial_objective=J_u)
    tau = cfg.tau0

    for k in range(1, cfg.max_outer + 1):
        g = problem.gradient(u)
        solves = 0

        def trial(tau_try: float) -> _Candidate:
            nonlocal solves
            solves += 1
            inst = ProxInstance(u.values - g / tau_try, tau_try, beta, grid, u.levels)
            sol = solve_prox_subproblem(inst)
            w = sol.control
            F_w = problem.value(w)
            tv_w = tv_discrete(w)
            J_w = F_w + beta * tv_w
            l2 = distances(u, w)[1]
            return _Candidate(w, F_w, tv_w, J_w, l2, sol.objective, (J_u - J_w) - cfg.eta * l2)

        cand = trial(tau)
        if cand.decrease_ok:
            # longer steps while they still decrease; stop once the prox output saturates
            while solves < cfg.max_backtrack:
                longer = trial(tau * cfg.theta)
                if not longer.decrease_ok or longer.control == cand.control:
                    break
                tau, cand = tau * cfg.theta, longer
        else:
            while not cand.decrease_ok and solves < cfg.max_backtrack:
                tau /= cfg.theta
                cand = trial(tau)
            if not cand.decrease_ok:
                trace.termination_reason = Termination.BACKTRACK_EXHAUSTED
                break

        trace.iterates.append(
            IterationRecord(
                k, cand.objective, cand.F, cand.tv, float(np.sqrt(cand.step_l2)), tau, True, cand.sub_objective, cand.margin
            )
        )
        if cand.control == u:
            trace.termination_reason = Termination.FIXED_POINT
            break
        u, F_u, tv_u, J_u = cand.control, cand.F, cand.tv, cand.objective

    trace.final_control = u
    trace.wall_time_s = time.perf_counter() - t_start
    return trace


def trust_region(problem: Objective, u0: GridControl, cfg: TrConfig = TrConfig()) -> SolveTrace:
    """Trust-region method on the partially linearized objective.

    Each iteration solves the budgeted subproblem around the current iterate;
    a step is accepted if the actual reduction of F + beta*TV is at least
    ``acceptance_ratio`` times the predicted one.
    """
    t_start = time.perf_counter()
    beta, grid = problem.beta, problem.grid
    min_radius = cfg.min_radius if cfg.min_radius is not None else grid.dt
    u = u0
    F_u = problem.value(u)
    tv_u = tv_discrete(u)
    J_u = F_u + beta * tv_u
    g = problem.gradient(u)
    radius = cfg.radius0
    trace = SolveTrace([], u0, Termination.MAX_ITER, initial_objective=J_u)

    for k in range(1, cfg.max_outer + 1):
        sol = solve_tr_subproblem(TrInstance(g, u, beta, radius))
        model_at_u = grid.dt * float(np.dot(g, u.values)) + beta * tv_u
        predicted = model_at_u - sol.objective
        w = sol.control
        if predicted <= PREDICTED_ZERO_TOL:
            # smaller radii cannot predict a reduction either
            trace.iterates.append(IterationRecord(k, J_u, F_u, tv_u, 0.0, radius, False, sol.objective - model_at_u))
            trace.termination_reason = Termination.PREDICTED_ZERO
            break
        F_w = problem.value(w)
        tv_w = tv_discrete(w)
        J_w = F_w + beta * tv_w
        actual = J_u - J_w
        accepted = actual >= cfg.acceptance_ratio * predicted
        step = float(np.sqrt(distances(u, w)[1]))
        trace.iterates.append(IterationRecord(k, J_w, F_w, tv_w, step, radius, accepted, sol.objective - model_at_u))
        if accepted:
            u, F_u, tv_u, J_u = w, F_w, tv_w, J_w
            g = problem.gradient(u)
            radius = min(radius * cfg.expand, cfg.radius0)
        else:
            radius *= cfg.shrink
            if radius < min_radius:
                trace.termination_reason = Termination.RADIUS_FLOOR
                break

    trace.final_control = u
    trace.wall_time_s = time.perf_counter() - t_start
    return trace


def refine_continuation(
    problem_family: Callable[[int], Objective],
    u0: GridControl,
    n_targets: Sequence[int],
    inner: str = "tr",
    cfg: Union[PgConfig, TrConfig, None] = None,
) -> SolveTrace:
    """Solve on the coarsest grid, prolong the result, re-solve on the next grid, and so on."""
    n_targets = [int(n) for n in n_targets]
    if not n_targets:
        raise ValueError("need at least one grid size")
    if n_targets[0] != u0.grid.n:
        raise ValueError("u0 must live on the first grid of the chain")
    for a, b in zip(n_targets, n_targets[1:]):
        if b <= a or b % a:
            raise ValueError(f"refinement chain {n_targets} is not strictly increasing by integer factors")
    if inner == "tr":
        solve, cfg = trust_region, cfg or TrConfig()
    elif inner == "pg":
        solve, cfg = proximal_gradient, cfg or PgConfig()
    else:
        raise ValueError(f"unknown inner solver {inner!r}")

    t_start = time.perf_counter()
    u = u0
    summary = []
    trace = None
    for i, n in enumerate(n_targets):
        if i:
            u = prolong(u, n // n_targets[i - 1])
        trace = solve(problem_family(n), u, cfg)
        u = trace.final_control
        summary.append(
            {
                "n": n,
                "objective": trace.final_objective,
                "iterations": trace.iterations,
                "termination_reason": trace.termination_reason.value,
                "wall_time_s": trace.wall_time_s,
            }
        )
        log.debug("continuation n=%d objective=%.6g iterations=%d", n, trace.final_objective, trace.iterations)
    trace.levels = summary
    trace.wall_time_s = time.perf_counter() - t_start
    return trace
