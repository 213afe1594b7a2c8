"""Receding-horizon waypoint optimization.

:func:`solve_ocp` minimizes the look-ahead cost over ``N`` waypoints inside the
square region subject to a total path-length budget.  The box constraint is
handled by projection inside a limited-memory quasi-Newton inner solver; the
path-length inequality by an augmented Lagrangian outer loop.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .gp_field import DEFAULT_NOISE_SD, GpModel, GridDomain, JITTER, se_kernel
from .objective import (
    CostWeights,
    EnvForcing,
    Objective,
    current_cost_grad,
    path_length,
    path_length_grad,
    wind_cost,
)
from . import kernels

logger = logging.getLogger(__name__)


class InfeasibleStart(ValueError):
    """The current position lies outside the exploration region."""


@dataclass(frozen=True)
class PlannerConfig:
    horizon_n: int = 5
    l_max: float = 6160.0
    bounds: GridDomain = field(default_factory=GridDomain)
    variance_mode: str = "bcm"
    max_iters: int = 200
    kkt_tol: float = 1e-6
    constraint_tol: float = 1e-3
    lookahead_noise_sd: float = DEFAULT_NOISE_SD
    multistart: bool = True
    n_starts: int = 5
    two_opt: bool = False
    ngon_restart: bool = True

    def __post_init__(self):
        if self.horizon_n < 1:
            raise ValueError("horizon_n must be >= 1")
        if self.l_max < 0:
            raise ValueError("l_max must be non-negative")
        if self.kkt_tol <= 0 or self.constraint_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class Plan:
    waypoints: np.ndarray
    objective: float
    path_len: float
    iterations: int
    solve_time: float
    converged: bool
    setup_time: float = 0.0
    kkt: float = float("nan")
    multiplier: float = 0.0
    initial_objective: float = float("nan")
    # inner iterations of each start, the warm (or n-gon) start first
    start_iterations: tuple = ()


def initial_guess_ngon(r0, n: int, s: float) -> np.ndarray:
    """Vertices of a regular n-gon of radius ``s/4`` about the region center.

    ``r0`` is accepted for signature symmetry; the polygon does not depend on it.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ang = 2 * np.pi * np.arange(n) / n
    return 0.25 * s * np.column_stack([np.cos(ang), np.sin(ang)])


def shift_warm_start(prev: Plan | np.ndarray) -> np.ndarray:
    """Drop the reached waypoint and repeat the last one: ``(a, b, c) -> (b, c, c)``."""
    W = np.asarray(prev.waypoints if isinstance(prev, Plan) else prev, dtype=float).reshape(-1, 2)
    if len(W) == 0:
        raise ValueError("need at least one waypoint")
    return np.vstack([W[1:], W[-1:]])


def separate_coincident(r0, R, bounds: GridDomain) -> np.ndarray:
    """Move a waypoint that coincides with its predecessor off along the previous segment.

    Coincident waypoints receive identical gradients, so a descent method can
    never pull them apart; the repeated tail of :func:`shift_warm_start` is the
    usual source.
    """
    R = np.array(R, dtype=float).reshape(-1, 2)
    r0 = np.asarray(r0, dtype=float).reshape(2)
    h, tol = bounds.half, 1e-9 * bounds.side_s
    for i in range(1, len(R)):
        if np.linalg.norm(R[i] - R[i - 1]) > tol:
            continue
        d = R[i - 1] - (R[i - 2] if i >= 2 else r0)
        cand = np.clip(R[i - 1] + d, -h, h)
        if np.linalg.norm(cand - R[i - 1]) <= tol:
            cand = np.clip(R[i - 1] - d, -h, h)
        if np.linalg.norm(cand - R[i - 1]) <= tol:
            toward = -R[i - 1] if np.any(np.abs(R[i - 1]) > tol) else np.array([1.0, 0.0])
            cand = R[i - 1] + bounds.side_s / 8 * toward / np.linalg.norm(toward)
        R[i] = cand
    return R


def make_feasible(r0, R, bounds: GridDomain, l_max: float) -> np.ndarray:
    """Clip to the region, then shrink toward ``r0`` until the budget holds.

    Shrinking ``r0 + t (R - r0)`` scales every segment by ``t`` and stays in the
    (convex) region, so ``t = l_max / length`` restores feasibility exactly.
    """
    r0 = np.asarray(r0, dtype=float)
    R = np.clip(np.asarray(R, dtype=float).reshape(-1, 2), -bounds.half, bounds.half)
    L = path_length(r0, R)
    if L > l_max:
        t = l_max / L if L > 0 else 0.0
        # stay strictly inside the budget despite rounding
        t *= 1 - 1e-12
        R = np.clip(r0 + t * (R - r0), -bounds.half, bounds.half)
    return R


class _AugLag:
    """Augmented Lagrangian of the budget constraint in scaled coordinates."""

    def __init__(self, obj: Objective, r0, l_max: float, scale: float, shape):
        self.obj = obj
        self.r0 = r0
        self.l_max = l_max
        self.scale = scale
        self.shape = shape
        self.lam = 0.0
        self.rho = 10.0
        self.best = None  # (f, R) of the best feasible point seen
        self.tol = 0.0

    def f_g(self, z):
        R = z.reshape(self.shape) * self.scale
        f, gf = self.obj.value_and_grad(R)
        L, gL = path_length_grad(self.r0, R)
        c = (L - self.l_max) / self.l_max
        if c * self.l_max <= self.tol and (self.best is None or f < self.best[0]):
            self.best = (f, R.copy())
        return f, gf * self.scale, c, gL * (self.scale / self.l_max)

    def __call__(self, z):
        f, gf, c, gc = self.f_g(z)
        t = self.lam + self.rho * c
        if t > 0:
            val = f + (t * t - self.lam**2) / (2 * self.rho)
            grad = gf + t * gc
        else:
            val = f - self.lam**2 / (2 * self.rho)
            grad = gf
        return val, grad.ravel()


def _projected_step(z, g, lo, hi):
    return np.clip(z - g, lo, hi) - z


def _min_norm_subgradient(g, r0, R, w, eps):
    """Shrink ``g`` using the kink of ``w * |segment|`` at zero-length segments.

    At a zero-length segment the path length has a subdifferential ball of
    radius ``w`` instead of a gradient, so any point whose residual fits in
    that ball is stationary. Segments are relaxed one at a time.
    """
    g = g.copy()
    P = np.vstack([np.asarray(r0, dtype=float)[None, :], R])
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    for k in np.flatnonzero(seg <= eps):
        # segment k joins P[k] (r0 when k == 0) to waypoint k
        if k == 0:
            n = np.linalg.norm(g[0])
            if n > 0:
                g[0] *= max(0.0, n - w) / n
            continue
        a, b = g[k - 1], g[k]
        u = (a - b) / 2
        n = np.linalg.norm(u)
        if n > w:
            u *= w / n
        g[k - 1], g[k] = a - u, b + u
    return g


def _pinned(al: _AugLag, z) -> np.ndarray:
    """Waypoints resting on a zero-length segment that the kink holds in place."""
    f, gf, c, gc = al.f_g(z)
    R = z.reshape(al.shape) * al.scale
    g = gf + al.lam * gc
    w = (al.lam / al.l_max + al.obj.weights.lambda1) * al.scale
    P = np.vstack([np.asarray(al.r0, dtype=float)[None, :], R])
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    pin = np.zeros(len(R), dtype=bool)
    for k in np.flatnonzero(seg <= 1e-9 * al.scale):
        r = g[0] if k == 0 else (g[k - 1] - g[k]) / 2
        pin[k] = np.linalg.norm(r) <= w
    return pin


def _kkt(al: _AugLag, z, lo, hi):
    f, gf, c, gc = al.f_g(z)
    lam = al.lam
    g = gf + lam * gc
    R = z.reshape(al.shape) * al.scale
    w = (lam / al.l_max + al.obj.weights.lambda1) * al.scale
    g = _min_norm_subgradient(g, al.r0, R, w, 1e-9 * al.scale)
    stat = np.max(np.abs(_projected_step(z, g.ravel(), lo, hi)))
    fs = max(1.0, abs(f))
    return max(stat / fs, max(c, 0.0), abs(lam * c) / fs), f, c


def _lsq_multiplier(al: _AugLag, z, lo, hi) -> float:
    f, gf, c, gc = al.f_g(z)
    gf, gc = gf.ravel(), gc.ravel()
    free = ~(((z <= lo) & (gf > 0)) | ((z >= hi) & (gf < 0)))
    den = gc[free] @ gc[free]
    if den <= 0 or c < -1e-3:
        return 0.0
    return max(0.0, -(gf[free] @ gc[free]) / den)


def _segments(al: _AugLag, z) -> np.ndarray:
    R = z.reshape(al.shape) * al.scale
    P = np.vstack([np.asarray(al.r0, dtype=float)[None, :], R])
    return np.linalg.norm(np.diff(P, axis=0), axis=1)


def _snap(al: _AugLag, z, k: int) -> np.ndarray:
    """Move waypoint ``k`` onto its predecessor (``r0`` for the first)."""
    R = z.reshape(al.shape).copy()
    R[k] = np.asarray(al.r0, dtype=float) / al.scale if k == 0 else R[k - 1]
    return R.ravel()


def _inner_solve(al: _AugLag, z, lo, hi, budget: int, gtol: float) -> tuple[np.ndarray, int]:
    """L-BFGS-B on the augmented Lagrangian with kinked waypoints pinned.

    A waypoint drifting onto its predecessor sits on the nondifferentiable
    point of the path length, where quasi-Newton steps stall. When one gets
    within ``near`` of it, the solve stops, the waypoint is snapped onto the
    kink and pinned there if the subgradient condition holds.
    """
    near = 1e-3 * al.scale
    iters = 0
    free_to_leave = np.zeros(al.shape[0], dtype=bool)
    while True:
        pin = _pinned(al, z)
        box = [(v, v) if p else (lo, hi) for v, p in zip(z, np.repeat(pin, 2))]
        watch = ~pin & ~free_to_leave
        count = [0]

        def stop_near_kink(x):
            count[0] += 1
            if np.any(watch & (_segments(al, np.clip(x, lo, hi)) < near)):
                raise StopIteration

        res = minimize(
            al, z, jac=True, method="L-BFGS-B", bounds=box, callback=stop_near_kink,
            options={"maxiter": max(1, budget - iters), "gtol": gtol, "ftol": 1e-15, "maxcor": 20},
        )
        # a stopped run may not report nit; the callback fires once per iteration
        iters += int(res.get("nit", count[0]))
        z = np.clip(res.x, lo, hi)
        hits = np.flatnonzero(watch & (_segments(al, z) < near))
        if hits.size == 0 or iters >= budget:
            return z, iters
        k = int(hits[0])
        zs = _snap(al, z, k)
        if _pinned(al, zs)[k]:
            z = zs
        # each waypoint is snapped at most once per inner solve
        free_to_leave[k] = True


def _done(al: _AugLag, kkt: float, c: float, cfg: PlannerConfig) -> bool:
    # an active budget (positive multiplier) must also be tight to constraint_tol
    tight = al.lam == 0.0 or abs(c) * cfg.l_max <= cfg.constraint_tol
    return kkt <= cfg.kkt_tol and c * cfg.l_max <= cfg.constraint_tol and tight


def _local_solve(obj: Objective, R0: np.ndarray, cfg: PlannerConfig, r0) -> dict:
    """Projected augmented-Lagrangian solve from a feasible start ``R0``."""
    b = cfg.bounds
    scale = b.half
    shape = R0.shape
    lo, hi = -1.0, 1.0
    al = _AugLag(obj, r0, cfg.l_max, scale, shape)
    al.tol = cfg.constraint_tol
    z = (R0 / scale).ravel()
    f0 = obj.value_and_grad(R0)[0]
    al.best = (f0, R0.copy())
    al.lam = _lsq_multiplier(al, z, lo, hi)
    al.rho = 10.0 * max(1.0, al.lam)
    iters = 0
    kkt, f, c = _kkt(al, z, lo, hi)
    converged = _done(al, kkt, c, cfg)
    prev_v = np.inf
    outer = 0
    while not converged and iters < cfg.max_iters and outer < 30:
        outer += 1
        gtol = cfg.kkt_tol * max(1.0, abs(f))
        z, nit = _inner_solve(al, z, lo, hi, max(1, cfg.max_iters - iters), gtol)
        iters += nit
        _, _, c, _ = al.f_g(z)
        # progress on feasibility and complementarity, measured before the update
        v = abs(max(c, -al.lam / al.rho))
        al.lam = max(0.0, al.lam + al.rho * c)
        kkt, f, c = _kkt(al, z, lo, hi)
        converged = _done(al, kkt, c, cfg)
        if converged:
            break
        if v > 0.25 * prev_v:
            al.rho = min(al.rho * 10.0, 1e10)
        prev_v = v
        if nit == 0 and al.rho >= 1e10:
            break
    R = z.reshape(shape) * scale
    return {"R": R, "iters": iters, "converged": converged, "kkt": kkt, "lam": al.lam, "best": al.best}


def _finalize(obj: Objective, out: dict, cfg: PlannerConfig, r0) -> tuple[np.ndarray, float]:
    R = np.clip(out["R"], -cfg.bounds.half, cfg.bounds.half)
    if path_length(r0, R) > cfg.l_max + cfg.constraint_tol:
        R = make_feasible(r0, R, cfg.bounds, cfg.l_max)
        out["converged"] = False
    f = obj.value_and_grad(R)[0]
    fb, Rb = out["best"]
    if fb < f:
        R, f = np.clip(Rb, -cfg.bounds.half, cfg.bounds.half), fb
    return R, f


def sweep_single(obj: Objective, r0, l_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Cost of every feasible optimization-grid node as a one-waypoint plan."""
    cand = obj.nodes
    ok = np.linalg.norm(cand - r0, axis=1) <= l_max
    cand = cand[ok]
    k = obj.kernel
    K = se_kernel(cand, obj.nodes, k)
    if obj.variance_mode == "exact" and obj.model.n:
        Vc = obj.V[:, ok]
        Q = K - Vc.T @ obj.V
        S = obj.var_d[ok] + obj.noise_var
        var = np.clip(obj.var_d[None, :] - Q * Q / S[:, None], 0.0, None)
    else:
        var_r = k.sigma2 - K * K / (k.sigma2 + obj.noise_var)
        with np.errstate(divide="ignore"):
            prec = obj.prec_d[None, :] + np.where(var_r > 0, 1.0 / np.where(var_r > 0, var_r, 1.0), np.inf)
            var = np.where(np.isfinite(prec), 1.0 / prec, 0.0)
    p, _ = kernels.misclass_terms(np.broadcast_to(obj.absdev, var.shape), var)
    cost = p.sum(axis=1)
    w = obj.weights
    if w.lambda1:
        cost = cost + w.lambda1 * np.linalg.norm(cand - r0, axis=1)
    if obj.forcing is not None:
        for i, r in enumerate(cand):
            if w.lambda2:
                cost[i] += w.lambda2 * current_cost_grad(r0, r[None, :], obj.forcing, w, smooth=True)[0]
            if w.lambda3:
                cost[i] += w.lambda3 * wind_cost(r0, r[None, :], obj.forcing.wind, w.leaky_slope)
    return cand, cost


def _two_opt(obj: Objective, R: np.ndarray, f: float, r0, cfg: PlannerConfig):
    improved = True
    while improved:
        improved = False
        for i in range(len(R) - 1):
            for j in range(i + 1, len(R)):
                cand = R.copy()
                cand[i : j + 1] = R[i : j + 1][::-1]
                if path_length(r0, cand) > cfg.l_max + cfg.constraint_tol:
                    continue
                fc = obj.value_and_grad(cand)[0]
                if fc < f - 1e-12:
                    R, f, improved = cand, fc, True
    return R, f


def build_objective(model: GpModel, cfg: PlannerConfig, weights: CostWeights, r0,
                    forcing: EnvForcing | None = None) -> Objective:
    return Objective(model, r0, weights, cfg.bounds, forcing, cfg.variance_mode, cfg.lookahead_noise_sd)


def solve_ocp(model: GpModel, config: PlannerConfig, weights: CostWeights, r0,
              forcing: EnvForcing | None = None, warm=None) -> Plan:
    """Locally optimal waypoints for the budgeted look-ahead problem.

    The first guess is ``warm`` when given, else the n-gon; it is made feasible
    before solving, and the returned plan never costs more than that guess.
    With ``ngon_restart`` a warm-started solve is repeated from the n-gon and
    the better result kept.  For ``horizon_n == 1`` with ``multistart`` the
    best nodes of a grid sweep are used as additional starts.
    """
    cfg = config
    r0 = np.asarray(r0, dtype=float).reshape(2)
    if not (np.all(np.isfinite(r0)) and cfg.bounds.contains(r0, tol=0.0)[0]):
        raise InfeasibleStart(f"start position {r0.tolist()} outside the region")
    N = cfg.horizon_n
    t0 = time.perf_counter()
    obj = build_objective(model, cfg, weights, r0, forcing)
    setup = time.perf_counter() - t0

    t1 = time.perf_counter()
    warm_given = warm is not None
    if warm is None:
        warm = initial_guess_ngon(r0, N, cfg.bounds.side_s)
    warm = np.asarray(warm, dtype=float).reshape(-1, 2)
    if len(warm) != N:
        raise ValueError(f"warm start has {len(warm)} waypoints, expected {N}")
    if cfg.l_max == 0:
        R = np.tile(r0, (N, 1))
        f = obj.value_and_grad(R)[0]
        return Plan(R, f, 0.0, 0, time.perf_counter() - t1, True, setup, 0.0, 0.0, f)

    starts = [make_feasible(r0, separate_coincident(r0, warm, cfg.bounds), cfg.bounds, cfg.l_max)]
    if warm_given and cfg.ngon_restart:
        starts.append(make_feasible(r0, initial_guess_ngon(r0, N, cfg.bounds.side_s), cfg.bounds, cfg.l_max))
    if N == 1 and cfg.multistart:
        cand, cost = sweep_single(obj, r0, cfg.l_max)
        for i in np.argsort(cost, kind="stable")[: cfg.n_starts]:
            starts.append(cand[i][None, :].copy())
    f_init = obj.value_and_grad(starts[0])[0]

    best = None
    per_start = []
    for R0 in starts:
        out = _local_solve(obj, R0, cfg, r0)
        per_start.append(out["iters"])
        R, f = _finalize(obj, out, cfg, r0)
        if best is None or f < best[1]:
            best = (R, f, out)
    R, f, out = best
    if cfg.two_opt and N > 2:
        R, f = _two_opt(obj, R, f, r0, cfg)
    solve = time.perf_counter() - t1
    return Plan(
        waypoints=R,
        objective=float(f),
        path_len=path_length(r0, R),
        iterations=sum(per_start),
        solve_time=solve,
        converged=bool(out["converged"]),
        setup_time=setup,
        kkt=float(out["kkt"]),
        multiplier=float(out["lam"]),
        initial_objective=float(f_init),
        start_iterations=tuple(per_start),
    )


def greedy_plan(model: GpModel, config: PlannerConfig, weights: CostWeights, r0,
                forcing: EnvForcing | None = None, warm=None) -> Plan:
    """One-step-ahead baseline: :func:`solve_ocp` with a horizon of one."""
    return solve_ocp(model, replace(config, horizon_n=1), weights, r0, forcing, warm)


def static_budget(config: PlannerConfig, n_static: int) -> float:
    return config.l_max * max(1.0, n_static / config.horizon_n)


def static_plan(model: GpModel, weights: CostWeights, r0, n_static: int = 20,
                config: PlannerConfig | None = None, forcing: EnvForcing | None = None,
                scale_budget: bool = True) -> Plan:
    """Offline baseline: a single long-horizon solve on the prior-only belief.

    The budget is scaled by ``n_static / horizon_n`` (never below the base
    budget) so the per-waypoint allowance matches the receding-horizon planner.
    """
    if n_static < 1:
        raise ValueError("n_static must be >= 1")
    config = config or PlannerConfig()
    l_max = static_budget(config, n_static) if scale_budget else config.l_max
    cfg = replace(config, horizon_n=n_static, l_max=l_max)
    return solve_ocp(model, cfg, weights, r0, forcing)
