"""Optimality audits for piecewise-constant integer controls.

The local checks work on the minimal switching representation: first-order
residuals of the gradient curve at the switch times, sign conditions on the
slope of the gradient at multi-level jumps, and definiteness of the matrix

    S[j, k] = mu_j mu_k H(t_j, t_k) + delta_jk mu_j g'(t_j),

where ``mu_j`` are jump heights, ``g`` the gradient curve and ``H`` the second
derivative kernel.  The non-local tests propose removing a short excursion or
inserting a new one, and only report proposals confirmed by re-evaluation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .control import (
    GridControl,
    SwitchingSignature,
    UniformGrid,
    full_representation,
    minimal_representation,
    tv_discrete,
)

DEFAULT_TOL = 1e-6

Kernel = Callable[[float, float], float]


class KernelUnavailable(ValueError):
    """Raised when a second-order audit is requested without a Hessian kernel."""


# --- gradient curves and kernels ---------------------------------------------

class GradientCurve:
    """Continuous reading of a cellwise-constant gradient.

    Values are the piecewise-linear interpolant of the cell means through the
    cell midpoints (constant in the outer half cells). ``integral`` integrates
    the cell means themselves, which is exact for the L2 pairing.
    """

    def __init__(self, grid: UniformGrid, cell_means):
        g = np.asarray(cell_means, dtype=float).reshape(-1)
        if g.size != grid.n:
            raise ValueError("need one gradient value per cell")
        self.grid = grid
        self.cell_means = g
        self._mid = grid.midpoints()

    def __call__(self, t) -> Union[float, np.ndarray]:
        out = np.interp(t, self._mid, self.cell_means)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t: float) -> float:
        """Slope of the interpolant; at a grid point this is the difference quotient of the adjacent cells."""
        g, dt, n = self.cell_means, self.grid.dt, self.grid.n
        if n < 2:
            return 0.0
        x = (t - self.grid.t_start) / dt - 0.5
        j = int(np.clip(math.floor(x), 0, n - 2))
        if x < 0 or x > n - 1:
            return 0.0
        return float((g[j + 1] - g[j]) / dt)

    def integral(self, a: float, b: float) -> float:
        """Integral of the cellwise-constant gradient over (a, b)."""
        dt, t0 = self.grid.dt, self.grid.t_start
        edges = np.clip((np.array([a, b]) - t0) / dt, 0, self.grid.n)
        lo, hi = edges
        if hi <= lo:
            return 0.0
        cum = np.concatenate(([0.0], np.cumsum(self.cell_means)))

        def primitive(x):
            k = min(int(math.floor(x)), self.grid.n - 1)
            return cum[k] + (x - k) * self.cell_means[k]

        return float(dt * (primitive(hi) - primitive(lo)))


def cell_gradient_curve(grid: UniformGrid, cell_means) -> GradientCurve:
    return GradientCurve(grid, cell_means)


def _cells_at(grid: UniformGrid, t: float) -> tuple[int, ...]:
    x = (t - grid.t_start) / grid.dt
    k = int(round(x))
    if abs(x - k) < 1e-9 and 0 < k < grid.n:
        return (k - 1, k)
    return (int(np.clip(math.floor(x), 0, grid.n - 1)),)


def cell_hessian_kernel(grid: UniformGrid, cells: np.ndarray) -> Kernel:
    """Time-indexed kernel from a cellwise matrix ``H[i, j]``.

    At a grid point the two adjacent cells are averaged, so a switch time sees
    the mean of the surrounding 2x2 block.
    """
    H = np.asarray(cells, dtype=float)
    if H.shape != (grid.n, grid.n):
        raise ValueError("cellwise kernel must be n x n")

    def kernel(s: float, t: float) -> float:
        return float(H[np.ix_(_cells_at(grid, s), _cells_at(grid, t))].mean())

    return kernel


def fd_hessian_kernel(gradient_at: Callable[[np.ndarray], np.ndarray], u: GridControl, eps: float = 1e-6) -> Kernel:
    """Kernel from central differences of a cellwise gradient; columns are computed lazily."""
    grid = u.grid
    x = u.values
    columns: dict[int, np.ndarray] = {}

    def column(c: int) -> np.ndarray:
        if c not in columns:
            e = np.zeros(grid.n)
            e[c] = eps
            # gradient is dF/du / dt, so another 1/dt turns it into the L2 kernel
            columns[c] = (gradient_at(x + e) - gradient_at(x - e)) / (2 * eps * grid.dt)
        return columns[c]

    def kernel(s: float, t: float) -> float:
        rows, cols = _cells_at(grid, s), _cells_at(grid, t)
        return float(np.mean([[0.5 * (column(j)[i] + column(i)[j]) for j in cols] for i in rows]))

    return kernel


# --- local audits ----------------------------------------------------------

@dataclass
class AuditReport:
    tol: float
    switch_times: list[float] = field(default_factory=list)
    jump_heights: list[float] = field(default_factory=list)
    first_order_residuals: list[tuple[float, float]] = field(default_factory=list)
    sign_checks: list[dict] = field(default_factory=list)
    second_order_matrix: Optional[np.ndarray] = None
    min_eigenvalue: Optional[float] = None
    flags: dict = field(default_factory=dict)
    verdict: Optional[str] = None

    @property
    def sign_violations(self) -> list[dict]:
        return [c for c in self.sign_checks if not c["necessary"]]

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.second_order_matrix is not None:
            d["second_order_matrix"] = self.second_order_matrix.tolist()
        d["sign_violations"] = self.sign_violations
        return d

    def table(self) -> str:
        """Plain-text rendering for terminals."""
        lines = [f"{'switch time':>12}  {'jump':>5}  {'|grad|':>11}  {'slope':>11}  sign"]
        signs = {c["index"]: c for c in self.sign_checks}
        slopes = self.flags.get("slopes", [])
        for j, (t, r) in enumerate(self.first_order_residuals):
            slope = f"{slopes[j]:11.4e}" if j < len(slopes) else " " * 11
            sign = signs[j]["required"] if j in signs else ""
            lines.append(f"{t:12.6f}  {self.jump_heights[j]:5.0f}  {r:11.4e}  {slope}  {sign}")
        for key in ("first_order", "signs_necessary", "signs_sufficient", "matrix_necessary", "matrix_sufficient"):
            if key in self.flags:
                lines.append(f"{key}: {self.flags[key]}")
        if self.min_eigenvalue is not None:
            lines.append(f"min eigenvalue: {self.min_eigenvalue:.6e}")
        if self.verdict:
            lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def _minimal(u: Union[GridControl, SwitchingSignature]) -> SwitchingSignature:
    if isinstance(u, SwitchingSignature):
        if u.kind != "minimal":
            raise ValueError("the local audit needs the minimal representation")
        return u
    return minimal_representation(u)


def audit_first_order(
    u: Union[GridControl, SwitchingSignature],
    grad_curve: Callable[[float], float],
    tol: float = DEFAULT_TOL,
) -> AuditReport:
    """Residuals ``|grad F(u)(t_j)|`` at every switch time; passes iff all are within tol."""
    sig = _minimal(u)
    res = [(float(t), abs(float(grad_curve(t)))) for t in sig.switch_times]
    rep = AuditReport(tol, list(sig.switch_times), [float(h) for h in sig.jump_heights], res)
    rep.flags["first_order"] = all(r <= tol for _, r in res)
    rep.flags["max_residual"] = max((r for _, r in res), default=0.0)
    rep.verdict = "pass" if rep.flags["first_order"] else "fail"
    return rep


def second_order_matrix(
    switch_times: Sequence[float],
    jump_heights: Sequence[float],
    slopes: Sequence[float],
    hessian_kernel: Kernel,
) -> np.ndarray:
    t = list(switch_times)
    mu = np.asarray(jump_heights, dtype=float)
    m = len(t)
    H = np.empty((m, m))
    for j in range(m):
        for k in range(j, m):
            H[j, k] = H[k, j] = hessian_kernel(t[j], t[k])
    return np.outer(mu, mu) * H + np.diag(mu * np.asarray(slopes, dtype=float))


def audit_second_order(
    u: Union[GridControl, SwitchingSignature],
    grad_curve: Callable[[float], float],
    grad_derivative: Callable[[float], float],
    hessian_kernel: Optional[Kernel],
    tol: float = DEFAULT_TOL,
) -> AuditReport:
    """First- and second-order audit.

    Verdicts: ``sufficient_pass`` when every strict condition holds (local
    minimizer with quadratic growth), ``necessary_fail`` when a necessary
    condition is violated beyond tol, and ``indeterminate`` in between.
    """
    if hessian_kernel is None:
        raise KernelUnavailable("second-order audit needs a Hessian kernel")
    sig = _minimal(u)
    rep = audit_first_order(sig, grad_curve, tol)
    slopes = [float(grad_derivative(t)) for t in sig.switch_times]
    rep.flags["slopes"] = slopes

    sign_nec, sign_suf = True, True
    for j, t in enumerate(sig.switch_times):
        if j in sig.up_jumps or j in sig.down_jumps:
            s = slopes[j] if j in sig.up_jumps else -slopes[j]
            check = {
                "index": j,
                "time": float(t),
                "slope": slopes[j],
                "required": ">= 0" if j in sig.up_jumps else "<= 0",
                "necessary": s >= -tol,
                "sufficient": s > tol,
            }
            sign_nec &= check["necessary"]
            sign_suf &= check["sufficient"]
            rep.sign_checks.append(check)

    S = second_order_matrix(sig.switch_times, sig.jump_heights, slopes, hessian_kernel)
    S = 0.5 * (S + S.T)
    lam = float(np.linalg.eigvalsh(S)[0]) if S.size else math.inf
    rep.second_order_matrix = S
    rep.min_eigenvalue = lam if S.size else None

    rep.flags.update(
        signs_necessary=sign_nec,
        signs_sufficient=sign_suf,
        matrix_necessary=lam >= -tol,
        matrix_sufficient=lam > tol,
    )
    necessary = rep.flags["first_order"] and sign_nec and lam >= -tol
    sufficient = rep.flags["first_order"] and sign_suf and lam > tol
    rep.flags["necessary_pass"] = necessary
    rep.verdict = "sufficient_pass" if sufficient else "indeterminate" if necessary else "necessary_fail"
    return rep


@dataclass
class ProxStationarityCheck:
    time: float
    gradient: float
    lower: float
    upper: float
    ok: bool


def prox_stationarity(
    u: GridControl,
    grad_curve: Callable[[float], float],
    tau_bar: float,
    tol: float = 0.0,
) -> tuple[bool, list[ProxStationarityCheck]]:
    """Two-sided bounds on the gradient at each switch time of a prox fixed point.

    For a group of full-representation switches at one time, with first index
    p and last index q, an upward group requires
    ``-tau/2 |a[p+1]-a[p]| <= g(t) <= tau/2 |a[q+1]-a[q]|`` and a downward
    group the mirrored bounds.
    """
    if tau_bar < 0:
        raise ValueError("tau_bar must be nonnegative")
    full = full_representation(u)
    a = full.segment_values
    times = full.switch_times
    checks = []
    p = 0
    while p < len(times):
        q = p
        while q + 1 < len(times) and times[q + 1] == times[p]:
            q += 1
        first = 0.5 * tau_bar * abs(a[p + 1] - a[p])
        last = 0.5 * tau_bar * abs(a[q + 1] - a[q])
        lower, upper = (-first, last) if a[p] < a[q + 1] else (-last, first)
        g = float(grad_curve(times[p]))
        checks.append(ProxStationarityCheck(float(times[p]), g, lower, upper, lower - tol <= g <= upper + tol))
        p = q + 1
    return all(c.ok for c in checks), checks


# --- non-local tests ---------------------------------------------------------

def removal_condition(beta: float, grad_integral: float, L: float, height: float, width: float, upward: bool = True) -> float:
    """Left-hand side of the excursion-removal test; negative means removal pays off.

    ``upward`` is a peak lowered by ``height``; otherwise a valley raised by it.
    """
    sign = -1.0 if upward else 1.0
    return -2.0 * beta + sign * grad_integral + 0.5 * L * height * width**2


def insertion_condition(beta: float, grad_integral: float, L: float, delta: float, width: float) -> float:
    """Left-hand side of the insertion test for a level change ``delta`` on a window."""
    return 2.0 * beta * abs(delta) + delta * grad_integral + 0.5 * L * delta**2 * width**2


@dataclass
class Improvement:
    kind: str  # "removal" or "insertion"
    control: GridControl
    window: tuple[float, float]
    from_level: int
    to_level: int
    condition: float  # left-hand side of the test, < 0
    bound: float  # guaranteed change of F + beta*TV, < 0
    actual: float  # re-evaluated change of F + beta*TV

    def to_dict(self) -> dict:
        d = asdict(self)
        d["control"] = self.control.to_dict()
        return d


def _plateaus(u: GridControl) -> list[tuple[int, int, int]]:
    """Maximal constant runs as (first cell, end cell exclusive, level index)."""
    cuts = np.flatnonzero(np.diff(u.kappa)) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [u.grid.n]))
    return [(int(a), int(b), int(u.kappa[a])) for a, b in zip(starts, ends)]


def _with_window(u: GridControl, a: int, b: int, level: int) -> GridControl:
    kappa = u.kappa.copy()
    kappa[a:b] = level
    return GridControl(u.grid, u.levels, kappa)


def _verify(cands: list[Improvement], u: GridControl, value: Callable[[GridControl], float], beta: float) -> list[Improvement]:
    J_u = value(u) + beta * tv_discrete(u)
    out = []
    for c in cands:
        c.actual = value(c.control) + beta * tv_discrete(c.control) - J_u
        if c.actual < 0:
            out.append(c)
    return out


def removal_candidates(
    u: GridControl,
    grad_curve: GradientCurve,
    L: float,
    beta: float,
    value: Optional[Callable[[GridControl], float]] = None,
) -> list[Improvement]:
    """Every interior excursion for which the removal test fires.

    A peak (both neighbours strictly lower) is lowered to the next lower level,
    a valley raised to the next higher one. With ``value`` (the smooth part F)
    the proposals are re-evaluated and only strict decreases are kept.
    """
    nu = u.levels.array
    dt, t0 = u.grid.dt, u.grid.t_start
    runs = _plateaus(u)
    cands = []
    for prev, (a, b, k), nxt in zip(runs, runs[1:], runs[2:]):
        if prev[2] < k and nxt[2] < k:
            new, upward = k - 1, True
        elif prev[2] > k and nxt[2] > k:
            new, upward = k + 1, False
        else:
            continue
        h = float(abs(nu[k] - nu[new]))
        ta, tb = t0 + a * dt, t0 + b * dt
        lhs = removal_condition(beta, grad_curve.integral(ta, tb), L, h, tb - ta, upward)
        if lhs < 0:
            cands.append(Improvement("removal", _with_window(u, a, b, new), (ta, tb), int(k), int(new), lhs, h * lhs, math.nan))
    cands.sort(key=lambda c: c.bound)
    return _verify(cands, u, value, beta) if value is not None else cands


def switch_removal_test(
    u: GridControl,
    grad_curve: GradientCurve,
    L: float,
    beta: float,
    value: Callable[[GridControl], float],
) -> Optional[Improvement]:
    """The verified removal with the best guaranteed decrease, or None."""
    cands = removal_candidates(u, grad_curve, L, beta, value)
    return cands[0] if cands else None


def default_windows(first: int, end: int) -> Iterable[tuple[int, int]]:
    """Cell windows strictly inside a run: power-of-two widths at half-width strides."""
    m = end - first
    width = 1
    while width <= m - 2:
        stride = max(1, width // 2)
        for a in range(first + 1, end - width, stride):
            yield a, a + width
        width *= 2


def _window_cells(grid: UniformGrid, windows: Sequence[tuple[float, float]]) -> list[tuple[int, int]]:
    out = []
    for t2, t3 in windows:
        x2, x3 = (t2 - grid.t_start) / grid.dt, (t3 - grid.t_start) / grid.dt
        a, b = int(round(x2)), int(round(x3))
        if abs(x2 - a) > 1e-9 or abs(x3 - b) > 1e-9 or not a < b:
            raise ValueError(f"window ({t2}, {t3}) does not lie on grid points")
        out.append((a, b))
    return out


def insertion_candidates(
    u: GridControl,
    grad_curve: GradientCurve,
    L: float,
    beta: float,
    value: Optional[Callable[[GridControl], float]] = None,
    window_grid: Optional[Sequence[tuple[float, float]]] = None,
) -> list[Improvement]:
    """Every (run, level, window) for which the insertion test fires.

    Windows lie strictly inside a constant run. By default each run is scanned
    with :func:`default_windows`; ``window_grid`` restricts the scan to given
    ``(t2, t3)`` pairs on grid points.
    """
    nu = u.levels.array
    dt, t0 = u.grid.dt, u.grid.t_start
    explicit = _window_cells(u.grid, window_grid) if window_grid is not None else None
    cum = np.concatenate(([0.0], np.cumsum(grad_curve.cell_means)))
    cands = []
    for a, b, j in _plateaus(u):
        windows = [(p, q) for p, q in explicit if a < p and q < b] if explicit is not None else default_windows(a, b)
        for p, q in windows:
            integral = dt * (cum[q] - cum[p])
            width = (q - p) * dt
            for k in range(u.levels.d):
                if k == j:
                    continue
                delta = float(nu[k] - nu[j])
                lhs = insertion_condition(beta, integral, L, delta, width)
                if lhs < 0:
                    cands.append(
                        Improvement("insertion", _with_window(u, p, q, k), (t0 + p * dt, t0 + q * dt), int(j), int(k), lhs, lhs, math.nan)
                    )
    cands.sort(key=lambda c: c.bound)
    return _verify(cands, u, value, beta) if value is not None else cands


def switch_insertion_test(
    u: GridControl,
    grad_curve: GradientCurve,
    L: float,
    beta: float,
    value: Callable[[GridControl], float],
    window_grid: Optional[Sequence[tuple[float, float]]] = None,
) -> Optional[Improvement]:
    """The verified insertion with the best guaranteed decrease, or None."""
    cands = insertion_candidates(u, grad_curve, L, beta, None, window_grid)
    # verify lazily: the best bound first
    J_u = value(u) + beta * tv_discrete(u)
    for c in cands:
        c.actual = value(c.control) + beta * tv_discrete(c.control) - J_u
        if c.actual < 0:
            return c
    return None
