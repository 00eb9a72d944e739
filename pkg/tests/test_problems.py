import math

import numpy as np
import pytest

from tvcontrol.control import GridControl, LevelSet, UniformGrid, random_switching_control
from tvcontrol.problems import (
    LinearObjective,
    LotkaVolterra,
    LvParams,
    SignalReconstruction,
    StateBlowUp,
    ZeroObjective,
    convolution_kernel,
    lv_gradient,
    lv_simulate,
    lv_value,
    make_problem,
    sr_assemble,
)

from oracles import fd_gradient, lv_fd_gradient, relative_error

LV_ZERO_VALUE_4096 = 3.0872309776996314  # forward simulation at u = 0, n = 4096


def test_lv_single_euler_step():
    p = LvParams(T=0.5)
    u = GridControl.constant(UniformGrid(0, 0.5, 1), LevelSet((0, 1)), 0)
    y = lv_simulate(u, p)
    y1, y2 = p.y0
    expected = (y1 + 0.5 * (y1 - y1 * y2), y2 + 0.5 * (y1 * y2 - y2))
    np.testing.assert_allclose(y[1], expected, rtol=1e-15)


def test_lv_equilibrium_is_constant():
    p = LvParams(y0=(1.0, 1.0))
    u = GridControl.constant(UniformGrid(0, 12, 64), LevelSet((0, 1)), 0)
    np.testing.assert_array_equal(lv_simulate(u, p), np.ones((65, 2)))
    assert lv_value(u, p) == 0.0


def test_lv_regression_anchor():
    u = GridControl.constant(UniformGrid(0, 12, 4096), LevelSet((0, 1)), 0)
    assert lv_value(u) == pytest.approx(LV_ZERO_VALUE_4096, rel=1e-13)


def test_lv_no_control_effect_without_theta():
    p = LvParams(theta1=0.0, theta2=0.0)
    u = random_switching_control(UniformGrid(0, 12, 64), LevelSet((0, 1)), 10, seed=0)
    assert np.all(lv_gradient(u, p) == 0)


@pytest.mark.parametrize("n", [32, 64])
def test_lv_gradient_matches_finite_differences(n):
    P = LotkaVolterra(n)
    rng = np.random.default_rng(n)
    for _ in range(3):
        x = rng.integers(0, 2, size=n).astype(float)
        assert relative_error(P.gradient_at(x), lv_fd_gradient(P, x)) <= 1e-6


def test_lv_last_cell_has_no_influence():
    # the last control value only moves the final state, which the left rule ignores
    P = LotkaVolterra(64)
    u = random_switching_control(P.grid, P.levels, 8, seed=3)
    assert P.gradient(u)[-1] == 0.0


def test_lv_values_finite_and_nonnegative():
    P = LotkaVolterra(256)
    for seed in range(20):
        u = random_switching_control(P.grid, P.levels, 32, seed=seed)
        val = P.value(u)
        assert np.isfinite(val) and val >= 0


def test_lv_blow_up_is_reported():
    P = LotkaVolterra(4, params=LvParams(alpha1=1e200))
    with pytest.raises(StateBlowUp):
        P.value(GridControl.constant(P.grid, P.levels, 0))


def test_convolution_kernel_support():
    assert np.all(convolution_kernel(np.array([-1.0, -0.1])) == 0)
    assert convolution_kernel(np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-16)


def test_sr_operator_structure():
    grid = UniformGrid(-1, 1, 32)
    ops = sr_assemble(grid)
    K = ops.K
    assert K.shape == (33, 32)
    assert np.all(np.triu(K) == 0)  # zero on and above the diagonal
    for off in range(1, 33):
        diag = np.diagonal(K, -off)
        assert np.all(diag == diag[0])
    M = ops.M.toarray()
    rows = M.sum(axis=1)
    np.testing.assert_allclose(rows[1:-1], grid.dt, rtol=1e-14)
    np.testing.assert_allclose(rows[[0, -1]], grid.dt / 2, rtol=1e-14)
    np.testing.assert_allclose(M, M.T)
    assert np.linalg.eigvalsh(M).min() > 0
    np.testing.assert_allclose(ops.f_vec, 0.4 * np.cos(2 * math.pi * grid.points()))


def test_sr_gradient_matches_finite_differences():
    P = SignalReconstruction(128)
    rng = np.random.default_rng(0)
    x = rng.integers(-2, 3, size=128).astype(float)
    g = P.gradient_at(x)
    assert relative_error(g, fd_gradient(P, x, 1e-3)) <= 1e-8


def test_sr_exact_fit_has_zero_value_and_gradient():
    grid = UniformGrid(-1, 1, 32)
    ops = sr_assemble(grid)
    u = random_switching_control(grid, LevelSet.range(-2, 2), 6, seed=1)
    ops = type(ops)(ops.K, ops.M, ops.K @ u.values, ops.kernel_integrals)
    P = SignalReconstruction(32, ops=ops)
    assert P.value(u) == pytest.approx(0.0, abs=1e-28)
    np.testing.assert_allclose(P.gradient(u), 0.0, atol=1e-14)


def test_sr_convexity_and_hessian():
    P = SignalReconstruction(64)
    rng = np.random.default_rng(4)
    H = P.hessian_matrix()
    assert np.array_equal(H, H.T)
    for _ in range(20):
        x, y = rng.integers(-2, 3, size=(2, 64)).astype(float)
        gap = P.value_at(x) - P.value_at(y) - P.grid.dt * P.gradient_at(y) @ (x - y)
        assert gap >= -1e-14
        # a quadratic has an exact second-order expansion
        assert gap == pytest.approx(0.5 * P.grid.dt**2 * (x - y) @ H @ (x - y), rel=1e-9, abs=1e-14)
        assert gap <= 0.5 * P.lipschitz_bound() * (P.grid.dt * np.abs(x - y).sum()) ** 2 + 1e-14


def test_zero_and_linear_objectives():
    grid = UniformGrid(0, 2, 4)
    lv = LevelSet((0, 1, 2))
    u = GridControl(grid, lv, [0, 2, 2, 1])
    assert ZeroObjective(grid, lv, 0.5).total(u) == 0.5 * 3
    lin = LinearObjective(grid, lv, 0.0, [1.0, -1.0, 0.5, 2.0])
    assert lin.value(u) == pytest.approx(0.5 * (0 - 2 + 1 + 2))
    with pytest.raises(ValueError):
        lin.value(GridControl.constant(UniformGrid(0, 1, 4), lv, 0))


def test_make_problem_round_trip():
    for P in (LotkaVolterra(32, 1e-3), SignalReconstruction(32, 2e-4), ZeroObjective(UniformGrid(0, 3, 8), LevelSet((0, 1)), 0.1)):
        Q = make_problem(P.config())
        assert type(Q) is type(P) and Q.grid == P.grid and Q.levels == P.levels and Q.beta == P.beta
    with pytest.raises(ValueError):
        make_problem({"name": "nope", "n": 4})
