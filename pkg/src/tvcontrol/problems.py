"""Smooth objective parts F for the integer control problems.

Every objective works on the cell values of a control.  ``gradient`` returns
cell means of the L2 gradient, i.e. ``dF/du_j / dt``, which is the quantity
paired with piecewise-constant directions by ``(g, w)_L2 = dt * sum g_j w_j``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse
from numba import njit

from .control import GridControl, LevelSet, UniformGrid, tv_discrete


class Objective:
    """Base class: subclasses implement ``value_at`` and ``gradient_at`` on value arrays."""

    name = "objective"

    def __init__(self, grid: UniformGrid, levels: LevelSet, beta: float):
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        self.grid = grid
        self.levels = levels
        self.beta = float(beta)

    def value_at(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient_at(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _values(self, u: GridControl) -> np.ndarray:
        if u.grid != self.grid:
            raise ValueError(f"control grid {u.grid} does not match problem grid {self.grid}")
        return u.values

    def value(self, u: GridControl) -> float:
        return self.value_at(self._values(u))

    def gradient(self, u: GridControl) -> np.ndarray:
        return self.gradient_at(self._values(u))

    def total(self, u: GridControl) -> float:
        """F(u) + beta*TV(u)."""
        return self.value(u) + self.beta * tv_discrete(u)

    def hessian_cells(self, u: GridControl) -> Optional[np.ndarray]:
        """Cellwise second-derivative kernel ``d2F/du_j du_k / dt^2``, if known exactly."""
        return None

    def config(self) -> dict:
        return {"name": self.name, "n": self.grid.n, "beta": self.beta}


class ZeroObjective(Objective):
    """F = 0; isolates the TV term."""

    name = "zero"

    def value_at(self, x):
        return 0.0

    def gradient_at(self, x):
        return np.zeros(self.grid.n)

    def hessian_cells(self, u):
        return np.zeros((self.grid.n, self.grid.n))

    def config(self):
        return {
            **super().config(),
            "t_start": self.grid.t_start,
            "t_end": self.grid.t_end,
            "levels": list(self.levels.values),
        }


class LinearObjective(Objective):
    """F(u) = (c, u)_L2 for a fixed cellwise coefficient vector c."""

    name = "linear"

    def __init__(self, grid, levels, beta, coeffs):
        super().__init__(grid, levels, beta)
        self.coeffs = np.asarray(coeffs, dtype=float)

    def value_at(self, x):
        return float(self.grid.dt * np.dot(self.coeffs, x))

    def gradient_at(self, x):
        return self.coeffs.copy()

    def hessian_cells(self, u):
        return np.zeros((self.grid.n, self.grid.n))


# --- Lotka-Volterra fishing problem ---------------------------------------

@dataclass(frozen=True)
class LvParams:
    alpha1: float = 1.0
    alpha2: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    theta1: float = 0.4
    theta2: float = 0.2
    y0: tuple[float, float] = (0.5, 0.7)
    T: float = 12.0

    def __post_init__(self):
        coeffs = (self.alpha1, self.alpha2, self.gamma1, self.gamma2, self.theta1, self.theta2)
        if any(c < 0 for c in coeffs) or self.T <= 0:
            raise ValueError("Lotka-Volterra coefficients must be nonnegative and T positive")
        object.__setattr__(self, "y0", tuple(float(v) for v in self.y0))

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2, self.gamma1, self.gamma2, self.theta1, self.theta2])


class StateBlowUp(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"Lotka-Volterra state became non-finite at Euler step {step}")
        self.step = step


@njit(cache=True)
def _lv_forward(p, y0, u, dt):
    a1, a2, g1, g2, th1, th2 = p[0], p[1], p[2], p[3], p[4], p[5]
    n = u.shape[0]
    y = np.empty((n + 1, 2))
    y[0, 0] = y0[0]
    y[0, 1] = y0[1]
    for j in range(n):
        y1 = y[j, 0]
        y2 = y[j, 1]
        y[j + 1, 0] = y1 + dt * (a1 * y1 - a2 * y1 * y2 - th1 * y1 * u[j])
        y[j + 1, 1] = y2 + dt * (g1 * y1 * y2 - g2 * y2 - th2 * y2 * u[j])
    return y


@njit(cache=True)
def _lv_value(y, dt):
    n = y.shape[0] - 1
    s = 0.0
    for j in range(n):
        r1 = y[j, 0] - 1.0
        r2 = y[j, 1] - 1.0
        s += r1 * r1 + r2 * r2
    return 0.5 * dt * s


@njit(cache=True)
def _lv_adjoint_gradient(p, y, u, dt):
    # lam[j] = dF/dy_j through the Euler recursion; y_n does not enter F
    a1, a2, g1, g2, th1, th2 = p[0], p[1], p[2], p[3], p[4], p[5]
    n = u.shape[0]
    g = np.empty(n)
    l1 = 0.0
    l2 = 0.0
    for j in range(n - 1, -1, -1):
        y1 = y[j, 0]
        y2 = y[j, 1]
        g[j] = -th1 * y1 * l1 - th2 * y2 * l2
        n1 = l1 + dt * ((a1 - a2 * y2 - th1 * u[j]) * l1 + g1 * y2 * l2) + dt * (y1 - 1.0)
        n2 = l2 + dt * (-a2 * y1 * l1 + (g1 * y1 - g2 - th2 * u[j]) * l2) + dt * (y2 - 1.0)
        l1 = n1
        l2 = n2
    return g


class LotkaVolterra(Objective):
    """Fishing problem: track (1, 1) with the explicit Euler states.

    ``F(u) = dt/2 * sum_{j<n} |y_j - (1,1)|^2`` with ``y_{j+1} = y_j + dt f(y_j, u_j)``;
    the gradient is the exact discrete adjoint of this scheme.
    """

    name = "lv"

    def __init__(self, n: int, beta: float = 1e-4, params: LvParams = LvParams()):
        super().__init__(UniformGrid(0.0, params.T, n), LevelSet((0, 1)), beta)
        self.params = params
        self._p = params.as_array()
        self._y0 = np.asarray(params.y0, dtype=float)

    def simulate_at(self, x: np.ndarray) -> np.ndarray:
        y = _lv_forward(self._p, self._y0, np.asarray(x, dtype=float), self.grid.dt)
        bad = ~np.isfinite(y).all(axis=1)
        if bad.any():
            raise StateBlowUp(int(np.argmax(bad)))
        return y

    def simulate(self, u: GridControl) -> np.ndarray:
        """States y_0..y_n, shape (n+1, 2)."""
        return self.simulate_at(self._values(u))

    def value_at(self, x):
        return float(_lv_value(self.simulate_at(x), self.grid.dt))

    def gradient_at(self, x):
        x = np.asarray(x, dtype=float)
        return _lv_adjoint_gradient(self._p, self.simulate_at(x), x, self.grid.dt)

    def config(self):
        return {**super().config(), "params": asdict(self.params)}


def lv_simulate(u: GridControl, p: LvParams = LvParams()) -> np.ndarray:
    return LotkaVolterra(u.grid.n, 0.0, p).simulate(u)


def lv_value(u: GridControl, p: LvParams = LvParams()) -> float:
    return LotkaVolterra(u.grid.n, 0.0, p).value(u)


def lv_gradient(u: GridControl, p: LvParams = LvParams()) -> np.ndarray:
    return LotkaVolterra(u.grid.n, 0.0, p).gradient(u)


# --- signal reconstruction problem ----------------------------------------

def convolution_kernel(t, omega0: float = math.pi) -> np.ndarray:
    """Damped oscillation kernel, zero for negative arguments."""
    t = np.asarray(t, dtype=float)
    s = omega0 * (t - 1.0) / math.sqrt(2.0)
    k = -(math.sqrt(2.0) / 10.0) * omega0 * np.exp(-s) * np.sin(s)
    return np.where(t >= 0.0, k, 0.0)


def target_signal(t) -> np.ndarray:
    return 0.4 * np.cos(2.0 * math.pi * np.asarray(t, dtype=float))


@dataclass(frozen=True, eq=False)
class SrOperators:
    K: np.ndarray  # (n+1, n), K[i, j] = integral of the kernel over [t_i - t_{j+1}, t_i - t_j]
    M: scipy.sparse.csr_matrix  # (n+1, n+1) hat-function mass matrix
    f_vec: np.ndarray  # (n+1,)
    kernel_integrals: np.ndarray  # (n,), first column of K below the zero diagonal


def sr_assemble(
    grid: UniformGrid,
    omega0: float = math.pi,
    gl_nodes: int = 5,
    signal: Callable = target_signal,
) -> SrOperators:
    n, dt = grid.n, grid.dt
    x, w = np.polynomial.legendre.leggauss(gl_nodes)
    left = dt * np.arange(n)
    # Gauss-Legendre on each [m dt, (m+1) dt]
    nodes = left[:, None] + 0.5 * dt * (x[None, :] + 1.0)
    integrals = 0.5 * dt * (convolution_kernel(nodes, omega0) @ w)
    col = np.concatenate(([0.0], integrals))
    K = scipy.linalg.toeplitz(col, np.zeros(n))
    main = np.full(n + 1, 2.0 * dt / 3.0)
    main[0] = main[-1] = dt / 3.0
    off = np.full(n, dt / 6.0)
    M = scipy.sparse.diags([off, main, off], [-1, 0, 1], format="csr")
    return SrOperators(K, M, signal(grid.points()), integrals)


class SignalReconstruction(Objective):
    """Deconvolution: ``F(u) = 1/2 (K u - f)^T M (K u - f)`` on hat-function interpolants."""

    name = "sr"

    def __init__(
        self,
        n: int,
        beta: float = 1e-4,
        omega0: float = math.pi,
        t0: float = -1.0,
        tf: float = 1.0,
        gl_nodes: int = 5,
        levels: LevelSet = LevelSet((-2, -1, 0, 1, 2)),
        ops: Optional[SrOperators] = None,
    ):
        super().__init__(UniformGrid(t0, tf, n), levels, beta)
        self.omega0 = float(omega0)
        self.gl_nodes = int(gl_nodes)
        self.ops = ops if ops is not None else sr_assemble(self.grid, omega0, gl_nodes)
        if self.ops.K.shape != (n + 1, n):
            raise ValueError("operator shape does not match the grid")
        self._hess = None

    def residual_at(self, x) -> np.ndarray:
        return self.ops.K @ np.asarray(x, dtype=float) - self.ops.f_vec

    def convolution(self, u: GridControl) -> np.ndarray:
        """(K u)(t_i) at the n+1 grid points."""
        return self.ops.K @ self._values(u)

    def value_at(self, x):
        r = self.residual_at(x)
        return float(0.5 * r @ (self.ops.M @ r))

    def gradient_at(self, x):
        r = self.residual_at(x)
        return (self.ops.K.T @ (self.ops.M @ r)) / self.grid.dt

    def hessian_matrix(self) -> np.ndarray:
        """``K^T M K / dt^2``; independent of the control."""
        if self._hess is None:
            MK = self.ops.M @ self.ops.K
            H = (self.ops.K.T @ MK) / self.grid.dt**2
            self._hess = 0.5 * (H + H.T)
        return self._hess

    def hessian_cells(self, u):
        return self.hessian_matrix()

    def hessian_kernel(self, i: int, j: int) -> float:
        return float(self.hessian_matrix()[i, j])

    def lipschitz_bound(self) -> float:
        """Certified L with |F(w) - F(u) - (grad F(u), w - u)| <= L/2 ||w - u||_L1^2 on the grid."""
        return float(np.abs(self.hessian_matrix()).max())

    def config(self):
        return {
            **super().config(),
            "omega0": self.omega0,
            "t0": self.grid.t_start,
            "tf": self.grid.t_end,
            "gl_nodes": self.gl_nodes,
            "levels": list(self.levels.values),
        }


def make_problem(config: dict) -> Objective:
    """Rebuild an objective from its ``config()`` dictionary."""
    cfg = dict(config)
    name = cfg.pop("name")
    n = int(cfg.pop("n"))
    beta = float(cfg.pop("beta", 1e-4))
    if name == "lv":
        params = cfg.get("params", {})
        if "y0" in params:
            params = {**params, "y0": tuple(params["y0"])}
        return LotkaVolterra(n, beta, LvParams(**params))
    if name == "sr":
        levels = LevelSet(tuple(cfg.pop("levels", (-2, -1, 0, 1, 2))))
        return SignalReconstruction(n, beta, levels=levels, **cfg)
    if name == "zero":
        grid = UniformGrid(cfg.get("t_start", 0.0), cfg.get("t_end", 1.0), n)
        return ZeroObjective(grid, LevelSet(tuple(cfg.get("levels", (0, 1)))), beta)
    raise ValueError(f"unknown problem {name!r}")


def problem_family(config: dict) -> Callable[[int], Objective]:
    """Grid-indexed factory: ``family(n)`` builds the same problem on n cells."""
    return lambda n: make_problem({**config, "n": n})
