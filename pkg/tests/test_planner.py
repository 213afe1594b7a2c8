import dataclasses

import numpy as np
import pytest

from olahgp.gp_field import GridDomain, KernelParams, PriorField, empty_model, fit
from olahgp.objective import CostWeights, Objective, path_length
from olahgp.planner import (
    InfeasibleStart,
    PlannerConfig,
    greedy_plan,
    initial_guess_ngon,
    make_feasible,
    separate_coincident,
    shift_warm_start,
    solve_ocp,
    static_plan,
    sweep_single,
)

from conftest import GAMMA, random_data, smooth_prior

GRID = GridDomain(4800.0, 32, 32)
KERNEL = KernelParams(1.0, 600.0)


def _model(seed, n=6):
    rng = np.random.default_rng(seed)
    return fit(smooth_prior(GRID, rng), KERNEL, random_data(rng, n, GRID)), rng


# -- initial guesses and warm starts ------------------------------------------------------

def test_ngon_square():
    assert np.allclose(initial_guess_ngon((0, 0), 4, 4800.0),
                       [(1200, 0), (0, 1200), (-1200, 0), (0, -1200)], atol=1e-9)


def test_ngon_single_and_radius():
    assert np.allclose(initial_guess_ngon((5, 5), 1, 4800.0), [(1200.0, 0.0)])
    P = initial_guess_ngon((0, 0), 7, 4800.0)
    assert np.allclose(np.hypot(*P.T), 1200.0)
    with pytest.raises(ValueError):
        initial_guess_ngon((0, 0), 0, 4800.0)


def test_shift_warm_start():
    a, b, c = (1.0, 2.0), (3.0, 4.0), (5.0, 6.0)
    assert np.array_equal(shift_warm_start(np.array([a, b, c])), [b, c, c])
    assert np.array_equal(shift_warm_start(np.array([a])), [a])
    assert len(shift_warm_start(np.zeros((5, 2)))) == 5


def test_separate_coincident():
    R = separate_coincident((0, 0), [(100.0, 0.0), (200.0, 0.0), (200.0, 0.0)], GRID)
    assert np.allclose(R, [(100, 0), (200, 0), (300, 0)])
    # pushed back inside when extrapolation leaves the box
    R = separate_coincident((0, 0), [(2400.0, 2400.0), (2400.0, 2400.0)], GRID)
    assert np.all(np.abs(R) <= 2400.0) and np.linalg.norm(R[1] - R[0]) > 0


def test_make_feasible_restores_budget():
    R = np.array([[2000.0, 0.0], [2000.0, 2000.0], [-3000.0, 2000.0]])
    F = make_feasible((0, 0), R, GRID, 3000.0)
    assert path_length((0, 0), F) <= 3000.0
    assert np.all(np.abs(F) <= GRID.half)


# -- solve_ocp contract ------------------------------------------------------------------

def test_zero_budget_returns_start():
    m, _ = _model(0)
    plan = solve_ocp(m, PlannerConfig(3, 0.0, GRID), CostWeights(GAMMA), (100.0, -200.0))
    assert np.array_equal(plan.waypoints, np.tile([100.0, -200.0], (3, 1)))


def test_infeasible_start_raises():
    m, _ = _model(0)
    with pytest.raises(InfeasibleStart):
        solve_ocp(m, PlannerConfig(3, 1000.0, GRID), CostWeights(GAMMA), (3000.0, 0.0))


def test_warm_start_length_checked():
    m, _ = _model(0)
    with pytest.raises(ValueError):
        solve_ocp(m, PlannerConfig(3, 1000.0, GRID), CostWeights(GAMMA), (0, 0), warm=np.zeros((2, 2)))


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(horizon_n=0)
    with pytest.raises(ValueError):
        PlannerConfig(kkt_tol=0.0)


@pytest.mark.parametrize("seed", range(12))
def test_feasibility_and_descent(seed):
    m, rng = _model(seed)
    N = int(rng.integers(1, 6))
    cfg = PlannerConfig(N, float(rng.uniform(500, 6160)), GRID, variance_mode=("bcm", "exact")[seed % 2])
    r0 = rng.uniform(-2400, 2400, 2)
    warm = rng.uniform(-2400, 2400, (N, 2)) if seed % 3 else None
    w = CostWeights(GAMMA)
    plan = solve_ocp(m, cfg, w, r0, warm=warm)
    assert path_length(r0, plan.waypoints) <= cfg.l_max + cfg.constraint_tol
    assert np.all(np.abs(plan.waypoints) <= GRID.half)
    assert plan.objective <= plan.initial_objective + 1e-9
    obj = Objective(m, r0, w, GRID, variance_mode=cfg.variance_mode)
    assert obj.value_and_grad(plan.waypoints)[0] == pytest.approx(plan.objective, rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_fixed_point_resolve(seed):
    m, rng = _model(seed)
    cfg = PlannerConfig(4, 4000.0, GRID, ngon_restart=False)
    w = CostWeights(GAMMA)
    first = solve_ocp(m, cfg, w, (0, 0))
    again = solve_ocp(m, cfg, w, (0, 0), warm=first.waypoints)
    assert again.start_iterations[0] <= 5
    assert abs(again.objective - first.objective) <= 1e-6


def test_deterministic():
    m, _ = _model(4)
    cfg = PlannerConfig(5, 6160.0, GRID)
    a = solve_ocp(m, cfg, CostWeights(GAMMA), (0, 0))
    b = solve_ocp(m, cfg, CostWeights(GAMMA), (0, 0))
    assert np.array_equal(a.waypoints, b.waypoints) and a.objective == b.objective


@pytest.mark.parametrize("seed", range(10))
def test_budget_saturates_without_length_penalty(seed):
    grid = GridDomain(4800.0, 24, 24)
    m = empty_model(PriorField.constant(grid, GAMMA + 0.5 + 0.1 * seed), KERNEL)
    cfg = PlannerConfig(5, 3000.0, grid)
    plan = solve_ocp(m, cfg, CostWeights(GAMMA, lambda1=0.0), (0, 0))
    assert plan.converged
    assert plan.path_len == pytest.approx(cfg.l_max, abs=cfg.constraint_tol)


# -- greedy and static ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_greedy_beats_sweep(seed):
    m, rng = _model(seed)
    cfg = PlannerConfig(1, 6160.0, GRID)
    w = CostWeights(GAMMA)
    r0 = rng.uniform(-2000, 2000, 2)
    plan = greedy_plan(m, cfg, w, r0)
    _, cost = sweep_single(Objective(m, r0, w, GRID), r0, cfg.l_max)
    assert plan.waypoints.shape == (1, 2)
    assert plan.objective <= cost.min() + 1e-3


def test_greedy_is_horizon_one():
    m, _ = _model(1)
    cfg = PlannerConfig(5, 6160.0, GRID)
    a = greedy_plan(m, cfg, CostWeights(GAMMA), (0, 0))
    b = solve_ocp(m, dataclasses.replace(cfg, horizon_n=1), CostWeights(GAMMA), (0, 0))
    assert np.array_equal(a.waypoints, b.waypoints)


def test_static_one_equals_greedy_first_step():
    m = empty_model(smooth_prior(GRID, np.random.default_rng(3)), KERNEL)
    cfg = PlannerConfig(5, 6160.0, GRID)
    s = static_plan(m, CostWeights(GAMMA), (0, 0), 1, cfg)
    g = greedy_plan(m, cfg, CostWeights(GAMMA), (0, 0))
    assert np.array_equal(s.waypoints, g.waypoints)


def test_static_long_horizon_costs_more_time():
    m = empty_model(smooth_prior(GRID, np.random.default_rng(4)), KERNEL)
    cfg = PlannerConfig(5, 6160.0, GRID)
    s = static_plan(m, CostWeights(GAMMA), (0, 0), 20, cfg)
    o = solve_ocp(m, cfg, CostWeights(GAMMA), (0, 0))
    assert len(s.waypoints) == 20
    assert s.path_len <= 4 * cfg.l_max + cfg.constraint_tol
    assert s.solve_time > o.solve_time


def test_two_opt_never_worse():
    m, _ = _model(6)
    base = solve_ocp(m, PlannerConfig(5, 6160.0, GRID), CostWeights(GAMMA), (0, 0))
    opt = solve_ocp(m, PlannerConfig(5, 6160.0, GRID, two_opt=True), CostWeights(GAMMA), (0, 0))
    assert opt.objective <= base.objective + 1e-12
