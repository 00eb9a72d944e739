"""Exact dynamic-programming solvers for the discretized subproblems.

Both subproblems are minimizations over level assignments ``kappa in {0..d-1}^n``
of a separable per-cell cost plus ``beta * sum |nu[kappa[j+1]] - nu[kappa[j]]|``.
They are solved by a backward Bellman sweep followed by a forward read-out of
the stored argmin policy:

* prox:  ``(tau*dt/2) * sum (nu[kappa_j] - v_j)^2 + beta*TV``, O(d^2 n)
* TR:    ``dt * sum g_j nu[kappa_j] + beta*TV`` subject to the integer budget
  ``sum |nu[kappa_j] - v_j| <= B``, O(d^2 n B).  The value table carries the
  exact budget consumed by the tail, with ``inf`` marking unreachable states.

Ties between successors are broken toward the smallest level index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numba import njit

from .control import GridControl, LevelSet, UniformGrid, total_variation

NO_POLICY = -1
MAX_ORACLE_ASSIGNMENTS = 10**7


@dataclass(frozen=True, eq=False)
class ProxInstance:
    v: np.ndarray
    tau: float
    beta: float
    grid: UniformGrid
    levels: LevelSet

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(-1)
        if v.size != self.grid.n:
            raise ValueError("len(v) must equal the number of grid cells")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        object.__setattr__(self, "v", v)

    @property
    def weight(self) -> float:
        """Coefficient tau*dt/2 of the quadratic fit term."""
        return 0.5 * self.tau * self.grid.dt

    def objective(self, kappa) -> float:
        nu = self.levels.array[np.asarray(kappa)].astype(float)
        return float(self.weight * np.sum((nu - self.v) ** 2) + self.beta * total_variation(nu))


@dataclass(frozen=True, eq=False)
class TrInstance:
    g: np.ndarray
    v: GridControl
    beta: float
    radius: float

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if g.size != self.v.grid.n:
            raise ValueError("len(g) must equal the number of grid cells")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        object.__setattr__(self, "g", g)

    @property
    def grid(self) -> UniformGrid:
        return self.v.grid

    @property
    def levels(self) -> LevelSet:
        return self.v.levels

    @property
    def budget(self) -> int:
        # relative slack absorbs radii that are integer multiples of dt up to rounding
        return int(math.floor(self.radius / self.grid.dt * (1 + 1e-12)))

    def distance_table(self) -> np.ndarray:
        """``dist[l, j] = |nu_l - v_j|`` as integers, shape (d, n)."""
        nu = self.levels.array
        return np.abs(nu[:, None] - nu[self.v.kappa][None, :])

    def objective(self, kappa) -> float:
        nu = self.levels.array[np.asarray(kappa)].astype(float)
        return float(self.grid.dt * np.dot(self.g, nu) + self.beta * total_variation(nu))

    def used_budget(self, kappa) -> int:
        nu = self.levels.array
        return int(np.abs(nu[np.asarray(kappa)] - nu[self.v.kappa]).sum())


@dataclass(frozen=True, eq=False)
class DpTables:
    """Value table ``phi`` and argmin policy.

    Prox: ``phi[l, i]`` (d x n), ``policy[l, i]`` (d x n-1).
    TR: ``phi[l, i, b]`` (d x n x B+1), ``policy[l, i, b]`` (d x n-1 x B+1).
    ``phi`` is None when only the rolling two-column table was kept.
    Policy entries are next-cell level indices, ``NO_POLICY`` for infeasible states.
    """

    phi: Optional[np.ndarray]
    policy: np.ndarray


@dataclass(frozen=True, eq=False)
class SubproblemSolution:
    control: GridControl
    objective: float
    tables: Optional[DpTables] = field(default=None, repr=False)


# --- compiled sweeps -------------------------------------------------------

@njit(cache=True)
def _prox_column(cost, fit, nxt, out, pol):
    d = fit.shape[0]
    for l in range(d):
        best = np.inf
        arg = 0
        for k in range(d):
            val = cost[l, k] + nxt[k]
            if val < best:
                best = val
                arg = k
        out[l] = fit[l] + best
        pol[l] = arg


@njit(cache=True)
def _prox_sweep(nu, v, weight, cost, phi, policy, rolling):
    d = nu.shape[0]
    n = v.shape[0]
    fit = np.empty(d)
    col = 0 if rolling else n - 1
    for l in range(d):
        r = nu[l] - v[n - 1]
        phi[l, col] = weight * (r * r)
    for i in range(n - 2, -1, -1):
        for l in range(d):
            r = nu[l] - v[i]
            fit[l] = weight * (r * r)
        if rolling:
            src = (n - 1 - i - 1) % 2
            dst = 1 - src
        else:
            src = i + 1
            dst = i
        _prox_column(cost, fit, phi[:, src], phi[:, dst], policy[:, i])
    if rolling:
        return (n - 1) % 2
    return 0


@njit(cache=True)
def _tr_slab(cost, dist, lin, nxt, out, pol):
    # nxt/out/pol have layout (B+1, d)
    nb, d = nxt.shape
    for b in range(nb):
        for l in range(d):
            bt = dist[l]
            if b < bt:
                out[b, l] = np.inf
                pol[b, l] = -1
                continue
            bp = b - bt
            best = np.inf
            arg = -1
            for k in range(d):
                p = nxt[bp, k]
                if p < np.inf:
                    val = cost[l, k] + p
                    if val < best:
                        best = val
                        arg = k
            if arg < 0:
                out[b, l] = np.inf
            else:
                out[b, l] = lin[l] + best
            pol[b, l] = arg


@njit(cache=True)
def _tr_sweep(cost, dist, lin, budget, phi, policy, rolling):
    # dist/lin: (n, d); phi: (n or 2, B+1, d); policy: (n-1, B+1, d)
    n, d = lin.shape
    last = 0 if rolling else n - 1
    for b in range(budget + 1):
        for l in range(d):
            phi[last, b, l] = lin[n - 1, l] if b == dist[n - 1, l] else np.inf
    for i in range(n - 2, -1, -1):
        if rolling:
            src = (n - 1 - i - 1) % 2
            dst = 1 - src
        else:
            src = i + 1
            dst = i
        _tr_slab(cost, dist[i], lin[i], phi[src], phi[dst], policy[i])
    if rolling:
        return (n - 1) % 2
    return 0


def _jump_costs(levels: LevelSet, beta: float) -> np.ndarray:
    nu = levels.array.astype(float)
    return beta * np.abs(nu[:, None] - nu[None, :])


def _policy_dtype(d: int):
    return np.int8 if d <= 127 else np.int32


# --- public solvers --------------------------------------------------------

def solve_prox_subproblem(inst: ProxInstance, keep_tables: bool = False) -> SubproblemSolution:
    """Globally minimize the discretized proximal subproblem.

    With ``keep_tables`` the full d x n value table is stored and returned;
    otherwise only two columns are kept in memory.
    """
    nu = inst.levels.array.astype(float)
    d, n = inst.levels.d, inst.grid.n
    cost = _jump_costs(inst.levels, inst.beta)
    phi = np.empty((d, n if keep_tables else 2))
    policy = np.empty((d, max(n - 1, 0)), dtype=_policy_dtype(d))
    first = _prox_sweep(nu, inst.v, inst.weight, cost, phi, policy, not keep_tables)
    col = phi[:, 0] if keep_tables else phi[:, first]
    kappa = np.empty(n, dtype=np.int64)
    kappa[0] = int(np.argmin(col))
    for i in range(n - 1):
        kappa[i + 1] = policy[kappa[i], i]
    control = GridControl(inst.grid, inst.levels, kappa)
    tables = DpTables(phi if keep_tables else None, policy)
    return SubproblemSolution(control, float(col[kappa[0]]), tables if keep_tables else None)


def solve_tr_subproblem(inst: TrInstance, keep_tables: bool = False) -> SubproblemSolution:
    """Globally minimize ``dt*sum g_j nu_j + beta*TV`` within the L1 budget around ``inst.v``."""
    levels, grid = inst.levels, inst.grid
    d, n, budget = levels.d, grid.n, inst.budget
    nu = levels.array.astype(float)
    cost = _jump_costs(levels, inst.beta)
    dist = np.ascontiguousarray(inst.distance_table().T)
    lin = np.ascontiguousarray(grid.dt * inst.g[:, None] * nu[None, :])
    phi = np.empty((n if keep_tables else 2, budget + 1, d))
    policy = np.empty((max(n - 1, 0), budget + 1, d), dtype=_policy_dtype(d))
    first = _tr_sweep(cost, dist, lin, budget, phi, policy, not keep_tables)
    start = phi[0] if keep_tables else phi[first]
    # smallest level first, then smallest consumed budget
    flat = int(np.argmin(start.T.reshape(-1)))
    l, b = divmod(flat, budget + 1)
    if not np.isfinite(start[b, l]):
        raise RuntimeError("trust-region subproblem has no feasible point")
    value = float(start[b, l])
    kappa = np.empty(n, dtype=np.int64)
    kappa[0] = l
    for i in range(n - 1):
        nxt = int(policy[i, b, l])
        b -= int(dist[i, l])
        l = nxt
        kappa[i + 1] = l
    control = GridControl(grid, levels, kappa)
    tables = None
    if keep_tables:
        tables = DpTables(np.transpose(phi, (2, 0, 1)), np.transpose(policy, (2, 0, 1)))
    return SubproblemSolution(control, value, tables)


def brute_force_oracle(inst: Union[ProxInstance, TrInstance]) -> SubproblemSolution:
    """Enumerate every level assignment; returns the lexicographically first minimizer."""
    d, n = inst.levels.d, inst.grid.n
    total = d**n
    if total > MAX_ORACLE_ASSIGNMENTS:
        raise ValueError(f"instance too large for enumeration: {d}^{n} assignments")
    nu = inst.levels.array.astype(float)
    is_tr = isinstance(inst, TrInstance)
    if is_tr:
        vnu = nu[inst.v.kappa]
        budget = inst.budget
    best_val, best_code = np.inf, -1
    chunk = 1 << 16
    powers = d ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        kappa = (codes[:, None] // powers[None, :]) % d
        vals = nu[kappa]
        tv = np.abs(np.diff(vals, axis=1)).sum(axis=1)
        if is_tr:
            obj = inst.grid.dt * (vals @ inst.g) + inst.beta * tv
            used = np.abs(vals - vnu[None, :]).sum(axis=1)
            obj = np.where(used <= budget, obj, np.inf)
        else:
            obj = inst.weight * ((vals - inst.v[None, :]) ** 2).sum(axis=1) + inst.beta * tv
        i = int(np.argmin(obj))
        if obj[i] < best_val:
            best_val, best_code = float(obj[i]), int(codes[i])
    kappa = (best_code // powers) % d
    return SubproblemSolution(GridControl(inst.grid, inst.levels, kappa), best_val)
