import json

import numpy as np
import pytest

from tvcontrol.control import GridControl, LevelSet, UniformGrid, distances, random_switching_control
from tvcontrol.dp import TrInstance, solve_tr_subproblem
from tvcontrol.problems import LinearObjective, LotkaVolterra, SignalReconstruction, ZeroObjective
from tvcontrol.solvers import (
    PgConfig,
    Termination,
    TrConfig,
    proximal_gradient,
    refine_continuation,
    trust_region,
)

L3 = LevelSet((0, 1, 2))


def test_config_validation():
    with pytest.raises(ValueError):
        PgConfig(theta=-0.5)
    with pytest.raises(ValueError):
        TrConfig(shrink=1.5)
    with pytest.raises(ValueError):
        TrConfig(radius0=0.1, min_radius=0.2)


def test_pg_zero_objective_constant_start():
    grid = UniformGrid(0, 1, 16)
    P = ZeroObjective(grid, L3, 0.1)
    u0 = GridControl.constant(grid, L3, 1)
    tr = proximal_gradient(P, u0)
    assert tr.iterations == 1 and tr.termination_reason is Termination.FIXED_POINT
    assert tr.final_control == u0


def test_pg_zero_objective_large_beta_flattens():
    grid = UniformGrid(0, 1, 16)
    P = ZeroObjective(grid, L3, 100.0)
    kappa = np.array([0] * 4 + [2] * 4 + [1] * 8)
    tr = proximal_gradient(P, GridControl(grid, L3, kappa))
    assert tr.iterations == 2 and tr.termination_reason is Termination.FIXED_POINT
    assert list(tr.final_control.kappa) == [1] * 16  # best constant fit of the start


def test_pg_decrease_condition_on_lv():
    P = LotkaVolterra(128)
    cfg = PgConfig()
    for seed in range(5):
        u0 = random_switching_control(P.grid, P.levels, 16, seed=seed)
        tr = proximal_gradient(P, u0, cfg)
        J = tr.initial_objective
        for rec in tr.iterates:
            assert cfg.eta * rec.step_norm_l2**2 <= J - rec.objective + 1e-15
            J = rec.objective
        assert tr.termination_reason is Termination.FIXED_POINT
        assert P.total(tr.final_control) == pytest.approx(tr.final_objective, rel=1e-14)


def test_pg_iterates_stay_feasible():
    P = SignalReconstruction(64)
    tr = proximal_gradient(P, random_switching_control(P.grid, P.levels, 20, seed=1))
    assert set(tr.final_control.values) <= set(P.levels.values)


def test_tr_stationary_start_stops_immediately():
    grid = UniformGrid(0, 1, 8)
    P = LinearObjective(grid, L3, 0.1, np.ones(8))
    u0 = GridControl.constant(grid, L3, 0)
    tr = trust_region(P, u0)
    assert tr.termination_reason is Termination.PREDICTED_ZERO
    assert tr.iterations == 1 and tr.final_control == u0


def test_tr_linear_objective_reaches_bang_bang():
    grid = UniformGrid(0, 1, 16)
    c = np.where(np.arange(16) < 8, 1.0, -1.0)
    P = LinearObjective(grid, L3, 1e-3, c)
    tr = trust_region(P, GridControl.constant(grid, L3, 1), TrConfig(radius0=0.25))
    assert list(tr.final_control.kappa) == [0] * 8 + [2] * 8


def test_tr_invariants_on_lv():
    P = LotkaVolterra(256)
    u0 = random_switching_control(P.grid, P.levels, 32, seed=0)
    tr = trust_region(P, u0)
    J = tr.initial_objective
    for rec in tr.iterates:
        if rec.accepted:
            assert rec.objective < J
            J = rec.objective
    assert tr.termination_reason in (Termination.RADIUS_FLOOR, Termination.PREDICTED_ZERO)
    assert 0.70 < tr.final_objective < 0.78


def test_tr_l1_step_within_radius():
    P = LotkaVolterra(128)
    u = random_switching_control(P.grid, P.levels, 16, seed=4)
    radius = TrConfig().radius0
    for _ in range(5):
        sol = solve_tr_subproblem(TrInstance(P.gradient(u), u, P.beta, radius))
        assert distances(u, sol.control)[0] <= radius + 1e-12
        u = sol.control


def test_continuation_single_grid_equals_inner():
    P = LotkaVolterra(128)
    u0 = random_switching_control(P.grid, P.levels, 16, seed=3)
    a = trust_region(P, u0)
    b = refine_continuation(lambda n: LotkaVolterra(n), u0, [128])
    assert a.final_control == b.final_control and a.final_objective == b.final_objective
    assert len(b.levels) == 1


def test_continuation_chain_validation():
    P = LotkaVolterra(64)
    u0 = random_switching_control(P.grid, P.levels, 8, seed=0)
    with pytest.raises(ValueError):
        refine_continuation(lambda n: LotkaVolterra(n), u0, [64, 96])
    with pytest.raises(ValueError):
        refine_continuation(lambda n: LotkaVolterra(n), u0, [128, 256])
    with pytest.raises(ValueError):
        refine_continuation(lambda n: LotkaVolterra(n), u0, [64], inner="newton")


def test_continuation_lv_improves_on_fine_grid():
    u0 = random_switching_control(UniformGrid(0, 12, 256), LevelSet((0, 1)), 32, seed=0)
    tr = refine_continuation(lambda n: LotkaVolterra(n), u0, [256, 512, 1024])
    assert [lv["n"] for lv in tr.levels] == [256, 512, 1024]
    assert tr.final_control.grid.n == 1024
    assert tr.final_objective < 0.70


def test_trace_serializes():
    P = LotkaVolterra(64)
    tr = proximal_gradient(P, random_switching_control(P.grid, P.levels, 8, seed=0))
    doc = json.loads(json.dumps(tr.to_dict()))
    assert doc["termination_reason"] == tr.termination_reason.value
    assert len(doc["iterates"]) == tr.iterations
