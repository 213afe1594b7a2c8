"""End-to-end acceptance criteria; each test prints one PASS/FAIL verdict line."""

import math
import subprocess
import time

import numpy as np
import pytest

from olahgp.config import load_config
from olahgp.experiment import ComparisonSpec, run_comparison
from olahgp.gp_field import (
    GridDomain,
    KernelParams,
    Measurement,
    PriorField,
    add_measurement,
    bcm_combine,
    empty_model,
    fit,
    lookahead_var_bcm,
    lookahead_var_exact,
    make_rng,
    posterior_at,
    sample_correlated_field,
)
from olahgp.mission import (
    STREAM_PRIOR_NOISE,
    evaluate,
    make_scenario,
    scenario_from_config,
)
from olahgp.objective import CostWeights, EnvForcing, Objective, path_length
from olahgp.planner import PlannerConfig, make_feasible, solve_ocp, sweep_single

from conftest import ACCEPTANCE, GAMMA, dense_posterior, random_data, smooth_prior

BASE_GRID = GridDomain(4800.0, 32, 128)
BASE_KERNEL = KernelParams(1.0, 600.0)


def verdict(k: int, ok: bool, detail: str):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


# -- 1: incremental GP against a dense batch solve ---------------------------------------

def test_criterion_1_gp_oracle():
    t0 = time.perf_counter()
    worst_m = worst_v = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 51))
        prior = smooth_prior(BASE_GRID, rng)
        data = random_data(rng, n, BASE_GRID, noise=(0.01, 1.0))
        model = empty_model(prior, BASE_KERNEL)
        for m in data:
            model = add_measurement(model, m)
        q = rng.uniform(-2400, 2400, (100, 2))
        mean, var = posterior_at(model, q)
        ref_m, ref_v = dense_posterior(prior, BASE_KERNEL, data, q)
        worst_m = max(worst_m, _rel(mean, ref_m))
        worst_v = max(worst_v, _rel(var, ref_v))
    dt = time.perf_counter() - t0
    ok = worst_m <= 1e-8 and worst_v <= 1e-8 and dt < 30
    verdict(1, ok, f"max rel err mean {worst_m:.2e}, var {worst_v:.2e}; {dt:.1f} s")


# -- 2: look-ahead variance --------------------------------------------------------------

def test_criterion_2_lookahead():
    rng = np.random.default_rng(0)
    prior = smooth_prior(BASE_GRID, rng)
    noise = 0.05
    phantom = 0.0
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        data = random_data(r, int(r.integers(0, 30)), BASE_GRID)
        model = fit(prior, BASE_KERNEL, data)
        R = r.uniform(-2400, 2400, (int(r.integers(1, 6)), 2))
        x = r.uniform(-2400, 2400, (20, 2))
        # refit with phantom measurements at R (their values do not enter the variance)
        ph = data + [Measurement(tuple(p), 0.0, noise) for p in R]
        _, ref = dense_posterior(prior, BASE_KERNEL, ph, x)
        phantom = max(phantom, _rel(lookahead_var_exact(model, R, x, noise), ref))

    x = rng.uniform(-2400, 2400, (100, 2))
    R = rng.uniform(-2400, 2400, (5, 2))
    data = random_data(rng, 25, BASE_GRID, noise=(noise, noise))
    model = fit(prior, BASE_KERNEL, data)
    no_r = _rel(lookahead_var_bcm(model, np.zeros((0, 2)), x, noise), lookahead_var_exact(model, np.zeros((0, 2)), x, noise))
    empty = empty_model(prior, BASE_KERNEL)
    no_d = _rel(lookahead_var_bcm(empty, R, x, noise), lookahead_var_exact(empty, R, x, noise))

    exact = lookahead_var_exact(model, R, x, noise)
    bcm = lookahead_var_bcm(model, R, x, noise)
    rel = np.abs(bcm - exact) / exact
    assert np.allclose(bcm, bcm_combine(posterior_at(model, x)[1],
                                        lookahead_var_exact(empty, R, x, noise), 1.0), rtol=1e-12)
    ok = phantom <= 1e-10 and no_r <= 1e-12 and no_d <= 1e-12 and rel.max() <= 0.20
    verdict(2, ok, f"phantom refit {phantom:.1e}; degenerate R=0 {no_r:.1e}, D=0 {no_d:.1e}; "
                   f"BCM rel err max {rel.max():.3f}, mean {rel.mean():.3f}, median {np.median(rel):.3f}, "
                   f"{np.mean(rel > 0.2):.0%} of points above 0.20")


# -- 3: gradients by central differences -------------------------------------------------

def _forcing(grid):
    a = grid.axis("eval")
    xx, yy = np.meshgrid(a, a)
    return EnvForcing(0.3 + 0.2 * np.sin(xx / 900), 0.25 * np.cos(yy / 700), grid.side_s, (1.5, -0.7))


def _near_kink(r0, R, forcing, eps, margin=10.0):
    """True within ``margin`` metres of a length, gate or LeakyReLU kink."""
    P = np.vstack([r0, R])
    d = np.diff(P, axis=0)
    if np.linalg.norm(d, axis=1).min() <= 2 * margin:
        return True
    if forcing is None:
        return False
    W = np.asarray(forcing.wind)
    # the wind term switches slope where a segment is perpendicular to the wind
    if np.min(np.abs(d @ W)) / np.linalg.norm(W) <= 2 * margin:
        return True
    # the current gate switches where the speed at a segment start crosses eps
    offs = margin * np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]])
    for r in P[:-1]:
        pts = np.clip(r + offs, -forcing.side_s / 2, forcing.side_s / 2)
        speed = np.linalg.norm(forcing.current(pts), axis=1)
        if np.any(np.sign(speed - eps) != np.sign(speed[0] - eps)):
            return True
    return False


def test_criterion_3_gradients():
    t0 = time.perf_counter()
    h = 1.0
    grid = BASE_GRID
    forcing = _forcing(grid)
    w = CostWeights(GAMMA)
    results = {}
    for label, fo in (("misclass+length", None), ("with current and wind", forcing)):
        worst, n_bad, n_all = 0.0, 0, 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            model = fit(smooth_prior(grid, rng), BASE_KERNEL, random_data(rng, 10, grid))
            while True:  # resample away from kinks
                r0 = rng.uniform(-2400, 2400, 2)
                R = make_feasible(r0, rng.uniform(-2400, 2400, (5, 2)), grid, 6160.0)
                if not _near_kink(r0, R, fo, w.eps_current):
                    break
            obj = Objective(model, r0, w, grid, fo)
            _, g = obj.value_and_grad(R)
            for i in range(R.shape[0]):
                for d in range(2):
                    Rp, Rm = R.copy(), R.copy()
                    Rp[i, d] += h
                    Rm[i, d] -= h
                    fd = (obj.value_and_grad(Rp)[0] - obj.value_and_grad(Rm)[0]) / (2 * h)
                    e = abs(fd - g[i, d]) / abs(g[i, d])
                    worst = max(worst, e)
                    n_bad += e > 1e-4
                    n_all += 1
        results[label] = (worst, n_bad, n_all)
    dt = time.perf_counter() - t0
    ok = all(n_bad == 0 for _, n_bad, _ in results.values()) and dt < 60
    detail = "; ".join(f"{k}: max rel err {w:.1e}, {b}/{a} components above 1e-4" for k, (w, b, a) in results.items())
    verdict(3, ok, f"h = 1 m; {detail}; {dt:.1f} s")


# -- 4: constraint satisfaction and descent ----------------------------------------------

def test_criterion_4_constraints():
    grid = GridDomain(4800.0, 16, 32)
    viol = 0.0
    bad_box = bad_descent = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        model = fit(smooth_prior(grid, rng), BASE_KERNEL, random_data(rng, int(rng.integers(0, 15)), grid))
        N = int(rng.integers(1, 6))
        cfg = PlannerConfig(N, float(rng.uniform(200, 8000)), grid, variance_mode=("bcm", "exact")[seed % 2])
        r0 = rng.uniform(-2400, 2400, 2)
        warm = rng.uniform(-3000, 3000, (N, 2)) if seed % 3 else None
        plan = solve_ocp(model, cfg, CostWeights(GAMMA, lambda1=float(rng.choice([0.0, 1e-3]))), r0, warm=warm)
        viol = max(viol, path_length(r0, plan.waypoints) - cfg.l_max)
        bad_box += int(np.any(np.abs(plan.waypoints) > grid.half))
        bad_descent += int(plan.objective > plan.initial_objective)
    ok = viol <= 1e-3 and bad_box == 0 and bad_descent == 0
    verdict(4, ok, f"200 solves; max budget excess {max(viol, 0.0):.1e} m; {bad_box} outside region; "
                   f"{bad_descent} ascents")


# -- 5: greedy near-optimality ------------------------------------------------------------

def test_criterion_5_greedy():
    grid = BASE_GRID
    gaps = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        model = fit(smooth_prior(grid, rng), BASE_KERNEL, random_data(rng, int(rng.integers(0, 20)), grid))
        r0 = rng.uniform(-2400, 2400, 2)
        cfg = PlannerConfig(1, 6160.0, grid, multistart=True)
        w = CostWeights(GAMMA)
        plan = solve_ocp(model, cfg, w, r0)
        _, cost = sweep_single(Objective(model, r0, w, grid), r0, cfg.l_max)
        gaps.append(plan.objective - cost.min())
    ok = max(gaps) <= 1e-3
    verdict(5, ok, f"20 beliefs; max (solution - best sweep node) {max(gaps):.2e}")


# -- 6 and 7: desk-scale comparison and timing --------------------------------------------

@pytest.fixture(scope="module")
def comparison():
    cfg = load_config("bundled")
    spec = ComparisonSpec(cfg, [("olah", 5), ("greedy", 1), ("static", 20)], n_seeds=10, timing=True)
    t0 = time.perf_counter()
    res = run_comparison(spec)
    return res, time.perf_counter() - t0


def test_criterion_6_ordering(comparison):
    res, dt = comparison
    g = res.paired_difference("greedy-1", "olah-5")
    s = res.paired_difference("static-20", "olah-5")
    means = {k: res.stats.final(k).mean for k in ("olah-5", "greedy-1", "static-20")}
    ok = (not res.stats.failures and g.n == 10 and s.n == 10
          and g.mean > g.stderr and s.mean > s.stderr and dt <= 1800)
    verdict(6, ok, "final total cost olah {olah-5:.1f}, greedy {greedy-1:.1f}, static {static-20:.1f}; ".format(**means)
            + f"greedy - olah {g.mean:.1f} +/- {g.stderr:.1f}, static - olah {s.mean:.1f} +/- {s.stderr:.1f} "
            + f"(paired stderr, n = {g.n}); {dt:.0f} s")


def test_criterion_7_timing(comparison):
    res, _ = comparison
    rows = [r for r in res.rows if r["method"] == "olah-5"]
    solve = float(np.mean([r["solve_s"] for r in rows]))
    gp25 = float(np.mean([r["gpupdate_ms"] for r in rows if r["step"] == 24]))
    ok = solve <= 5.0 and gp25 <= 200.0
    verdict(7, ok, f"mean solve {solve:.3f} s for N = 5 at RES = 32; GP update at |D| = 25 {gp25:.1f} ms")


# -- 8: prior-only field total ------------------------------------------------------------

def test_criterion_8_field_total():
    cfg = load_config("bundled")
    sc = make_scenario(scenario_from_config(cfg, 0))
    met = evaluate(empty_model(sc.prior, sc.cfg.kernel), sc.truth, sc.cfg.gamma)
    # independent script: prior-only mean is the prior field, sd is sigma everywhere
    sd = math.sqrt(sc.cfg.kernel.sigma2)
    ref = math.fsum(0.5 * math.erfc(abs(v - sc.cfg.gamma) / (sd * math.sqrt(2.0)))
                    for v in sc.prior.values.ravel().tolist())
    rel = abs(met.total_p - ref) / ref
    assert met.p_map.shape == (128, 128)
    verdict(8, rel <= 1e-12, f"total {met.total_p:.6f} vs scripted {ref:.6f}, rel err {rel:.1e}")


# -- 9: scenario noise statistics -----------------------------------------------------------

def test_criterion_9_scenario_statistics():
    cfg = load_config("bundled")
    grid = BASE_GRID
    kn = KernelParams(0.2, grid.side_s / 8)
    h = grid.side_s / (grid.res_eval - 1)
    lag = int(round(grid.side_s / 8 / h))
    i, j = 64, 40
    at, lagged, abs_err, exact = [], [], [], True
    for seed in range(200):
        sc = make_scenario(scenario_from_config(cfg, seed))
        diff = sc.prior.values - sc.truth.values
        draw = sample_correlated_field(kn, grid, make_rng(seed, STREAM_PRIOR_NOISE))
        exact &= bool(np.allclose(diff, np.abs(draw), rtol=0, atol=1e-12))
        at.append(draw[i, j])
        lagged.append(draw[i, j + lag])
        if seed < 50:
            abs_err.append(np.mean(np.abs(diff)))
    var = float(np.var(at, ddof=1))
    corr = float(np.corrcoef(at, lagged)[0, 1])
    mae = float(np.mean(abs_err))
    ok = exact and abs(var - 0.2) <= 0.05 and abs(corr - math.exp(-0.5)) <= 0.1 and abs(mae - math.sqrt(0.4 / math.pi)) <= 0.05
    verdict(9, ok, f"200 draws: variance {var:.3f}, lag {lag * h:.0f} m correlation {corr:.3f}; "
                   f"50 seeds: mean |prior - truth| {mae:.3f}; prior - truth = |draw| to 1e-12: {exact}")


# -- 10: byte-identical CLI outputs ---------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    def cli(*args):
        proc = subprocess.run(["olahgp", *args], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr

    same = {}
    for d in ("a", "b"):
        cli("run", "--config", "bundled", "--seed", "3", "--steps", "6", "--out", str(tmp_path / d / "run"))
        cli("run", "--config", "smoke", "--planner", "static", "--seed", "2", "--out", str(tmp_path / d / "static"))
        cli("compare", "--config", "smoke", "--n-seeds", "3", "--methods", "olah:3,greedy:1,static:6",
            "--out", str(tmp_path / d / "cmp"))
    files = ["run/mission.jsonl", "static/mission.jsonl", "cmp/runs.csv", "cmp/summary.csv", "cmp/timing.csv",
             "cmp/meta.json", *[f"cmp/logs/{m}_seed{s}.jsonl" for m in ("olah-3", "greedy-1", "static-6")
                                for s in range(3)]]
    for f in files:
        same[f] = (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    differing = [f for f, v in same.items() if not v]
    verdict(10, not differing, f"{len(files)} files compared; differing: {differing or 'none'}")
