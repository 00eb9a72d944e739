"""Independent reference computations used by the test suites."""

import mpmath as mp
import numpy as np

mp.mp.dps = 40


def lv_value_mp(params, x, dt):
    """Explicit Euler Lotka-Volterra objective (left rule) in 40-digit arithmetic."""
    a1, a2, g1, g2, t1, t2 = (mp.mpf(v) for v in (params.alpha1, params.alpha2, params.gamma1, params.gamma2, params.theta1, params.theta2))
    y1, y2 = mp.mpf(params.y0[0]), mp.mpf(params.y0[1])
    s = 0
    for u in x:
        s += (y1 - 1) ** 2 + (y2 - 1) ** 2
        y1, y2 = y1 + dt * (a1 * y1 - a2 * y1 * y2 - t1 * y1 * u), y2 + dt * (g1 * y1 * y2 - g2 * y2 - t2 * y2 * u)
    return dt * s / 2


def lv_fd_gradient(problem, x, h="1e-15"):
    """Central differences of the discrete objective per cell, divided by dt (cell means)."""
    h = mp.mpf(h)
    dt = mp.mpf(problem.grid.t_end - problem.grid.t_start) / problem.grid.n
    xs = [mp.mpf(float(v)) for v in x]
    out = []
    for j in range(len(xs)):
        a, b = list(xs), list(xs)
        a[j] += h
        b[j] -= h
        diff = lv_value_mp(problem.params, a, dt) - lv_value_mp(problem.params, b, dt)
        out.append(float(diff / (2 * h) / dt))
    return np.array(out)


def fd_gradient(problem, x, h):
    """Plain central differences in double precision, divided by dt."""
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (problem.value_at(x + e) - problem.value_at(x - e)) / (2 * h)
    return g / problem.grid.dt


def relative_error(g, ref, floor=1e-10):
    return float((np.abs(g - ref) / np.maximum(np.abs(ref), floor)).max())
