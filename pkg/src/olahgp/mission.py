"""Mission simulation: scenario construction, the sense-update-replan loop, evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .fgrid import read_fgrid
from .gp_field import (
    DEFAULT_NOISE_SD,
    GpModel,
    GridDomain,
    KernelParams,
    Measurement,
    PriorField,
    add_measurement,
    bilinear,
    empty_model,
    make_rng,
    posterior_field,
    sample_correlated_field,
)
from .objective import CostWeights, EnvForcing, misclass_prob, path_length
from .planner import (
    Plan,
    PlannerConfig,
    greedy_plan,
    shift_warm_start,
    solve_ocp,
    static_plan,
)

logger = logging.getLogger(__name__)

PLANNER_KINDS = ("olah", "greedy", "static")

# RNG sub-stream keys under the scenario seed
STREAM_PRIOR_NOISE = 0
STREAM_MEASUREMENT = 1
STREAM_TRUTH = 2


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridDomain
    kernel: KernelParams
    gamma: float
    measurement_noise_sd: float = DEFAULT_NOISE_SD
    noise_prior_variance: float = 0.2
    noise_prior_length: float | None = None
    noise_mode: str = "abs"
    n_steps: int = 25
    seed: int = 0
    truth: str = "bundled"
    truth_seed: int | None = None
    truth_level: float | None = None
    start: tuple[float, float] = (0.0, 0.0)
    forcing: EnvForcing | None = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.noise_prior_variance < 0 or self.measurement_noise_sd < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.noise_mode not in ("abs", "clamp"):
            raise ValueError("noise_mode must be 'abs' or 'clamp'")

    @property
    def noise_length(self) -> float:
        return self.noise_prior_length or self.grid.side_s / 8


@dataclass(frozen=True)
class GroundTruth:
    grid: GridDomain
    values: np.ndarray

    def at(self, x) -> np.ndarray:
        return bilinear(self.values, self.grid.side_s, x)


@dataclass
class Scenario:
    cfg: ScenarioConfig
    truth: GroundTruth
    prior: PriorField


@dataclass
class Metrics:
    total_p: float
    binary_rate: float
    p_map: np.ndarray = field(repr=False)
    class_model: np.ndarray = field(repr=False)
    class_truth: np.ndarray = field(repr=False)

    @property
    def error_map(self) -> np.ndarray:
        return self.class_model != self.class_truth


@dataclass
class StepRecord:
    step: int
    position: tuple[float, float]
    value: float
    noise_sd: float
    waypoints: list | None
    objective: float | None
    iterations: int
    converged: bool | None
    total_p: float
    binary_rate: float
    path_len_cum: float
    gpupdate_ms: float = float("nan")
    setup_s: float = float("nan")
    solve_s: float = float("nan")
    failed: bool = False
    error: str | None = None

    TIMING = ("gpupdate_ms", "setup_s", "solve_s")

    def to_json(self, timing: bool) -> dict:
        d = {
            "type": "step",
            "step": self.step,
            "position": list(self.position),
            "value": self.value,
            "noise_sd": self.noise_sd,
            "waypoints": self.waypoints,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "total_p": self.total_p,
            "binary_rate": self.binary_rate,
            "path_len_cum": self.path_len_cum,
            "failed": self.failed,
            "error": self.error,
        }
        for k in self.TIMING:
            v = getattr(self, k)
            d[k] = v if timing and math.isfinite(v) else None
        return d


@dataclass
class MissionLog:
    kind: str
    horizon: int
    seed: int
    steps: list[StepRecord]
    final_model: GpModel
    initial_total_p: float
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def measurements(self) -> list[Measurement]:
        return [Measurement(s.position, s.value, s.noise_sd) for s in self.steps]

    @property
    def final_total_p(self) -> float:
        return self.steps[-1].total_p

    def summary(self) -> dict:
        return {
            "type": "summary",
            "kind": self.kind,
            "horizon": self.horizon,
            "seed": self.seed,
            "n_steps": len(self.steps),
            "initial_total_p": self.initial_total_p,
            "final_total_p": self.final_total_p,
            "final_binary_rate": self.steps[-1].binary_rate,
            "n_failures": sum(s.failed for s in self.steps),
            "meta": self.meta,
        }

    def to_jsonl(self, timing: bool = False) -> str:
        lines = [json.dumps(s.to_json(timing), sort_keys=True) for s in self.steps]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path, timing: bool = False) -> None:
        Path(path).write_text(self.to_jsonl(timing))


def read_log(path) -> tuple[list[dict], dict]:
    recs = [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
    steps = [r for r in recs if r.get("type") == "step"]
    summary = next(r for r in recs if r.get("type") == "summary")
    return steps, summary


# -- scenario ---------------------------------------------------------------------

def bundled_truth_path() -> Path:
    return Path(resources.files("olahgp") / "data" / "bundled_truth.fgrid")


def synthetic_truth(grid: GridDomain, kernel: KernelParams, level: float, seed: int) -> np.ndarray:
    """A non-negative GP draw about ``level`` on the evaluation grid."""
    draw = sample_correlated_field(kernel, grid, make_rng(seed, STREAM_TRUTH))
    return np.maximum(level + draw, 0.0)


def _load_truth(cfg: ScenarioConfig) -> np.ndarray:
    if cfg.truth == "synthetic":
        seed = cfg.seed if cfg.truth_seed is None else cfg.truth_seed
        level = cfg.gamma if cfg.truth_level is None else cfg.truth_level
        return synthetic_truth(cfg.grid, cfg.kernel, level, seed)
    path = bundled_truth_path() if cfg.truth == "bundled" else Path(cfg.truth)
    values, side = read_fgrid(path)
    if values.shape[0] != cfg.grid.res_eval or not math.isclose(side, cfg.grid.side_s):
        # resample onto the evaluation grid
        nodes = cfg.grid.nodes("eval")
        scaled = nodes * (side / cfg.grid.side_s)
        values = bilinear(values, side, scaled).reshape(cfg.grid.res_eval, cfg.grid.res_eval)
    return values


def prior_noise(cfg: ScenarioConfig) -> np.ndarray:
    if cfg.noise_prior_variance == 0:
        return np.zeros((cfg.grid.res_eval,) * 2)
    k = KernelParams(cfg.noise_prior_variance, cfg.noise_length)
    draw = sample_correlated_field(k, cfg.grid, make_rng(cfg.seed, STREAM_PRIOR_NOISE))
    return np.abs(draw) if cfg.noise_mode == "abs" else np.maximum(draw, 0.0)


def make_scenario(cfg: ScenarioConfig, truth_source: str | None = None) -> Scenario:
    """Ground truth plus a prior corrupted by non-negative correlated noise."""
    if truth_source is not None:
        cfg = _replace(cfg, truth=truth_source)
    truth = _load_truth(cfg)
    prior = PriorField(cfg.grid, truth + prior_noise(cfg))
    return Scenario(cfg, GroundTruth(cfg.grid, truth), prior)


def _replace(obj, **kw):
    from dataclasses import replace

    return replace(obj, **kw)


def take_measurement(truth: GroundTruth, x, noise_sd: float, rng: np.random.Generator) -> Measurement:
    x = np.asarray(x, dtype=float).reshape(2)
    val = float(truth.at(x)[0])
    noise = float(rng.standard_normal()) * noise_sd
    return Measurement((x[0], x[1]), val + noise, noise_sd)


def evaluate(model: GpModel, truth: GroundTruth, gamma: float, grid: GridDomain | None = None,
             fields=None) -> Metrics:
    """Total misclassification probability and binary error rate on the evaluation grid."""
    grid = grid or truth.grid
    mean, var = fields if fields is not None else posterior_field(model, grid, "eval")
    p = misclass_prob(mean, np.sqrt(var), gamma)
    cm = mean > gamma
    ct = truth.values > gamma
    return Metrics(float(np.sum(p)), float(np.mean(cm != ct)), p, cm, ct)


# -- mission loop -----------------------------------------------------------------

def run_mission(scenario: Scenario, planner_kind: str, planner_cfg: PlannerConfig,
                weights: CostWeights, n_static: int = 20, scale_static_budget: bool = True) -> MissionLog:
    """Simulate one mission; motion is an instantaneous hop to the next waypoint."""
    if planner_kind not in PLANNER_KINDS:
        raise ValueError(f"planner_kind must be one of {PLANNER_KINDS}")
    cfg = scenario.cfg
    if planner_kind == "static":
        return _run_static(scenario, planner_cfg, weights, n_static, scale_static_budget)
    rng = make_rng(cfg.seed, STREAM_MEASUREMENT)
    model = empty_model(scenario.prior, cfg.kernel)
    init = evaluate(model, scenario.truth, cfg.gamma)
    pos = np.asarray(cfg.start, dtype=float)
    warm = None
    prev_plan: Plan | None = None
    travelled = 0.0
    steps = []
    horizon = 1 if planner_kind == "greedy" else planner_cfg.horizon_n
    for t in range(cfg.n_steps):
        meas = take_measurement(scenario.truth, pos, cfg.measurement_noise_sd, rng)
        t0 = time.perf_counter()
        model = add_measurement(model, meas)
        fields = posterior_field(model, cfg.grid, "eval")
        gp_ms = 1e3 * (time.perf_counter() - t0)
        met = evaluate(model, scenario.truth, cfg.gamma, fields=fields)
        rec = StepRecord(t, (float(pos[0]), float(pos[1])), meas.value, meas.noise_sd, None, None, 0,
                         None, met.total_p, met.binary_rate, travelled, gpupdate_ms=gp_ms)
        try:
            if planner_kind == "greedy":
                plan = greedy_plan(model, planner_cfg, weights, pos, cfg.forcing, warm)
            else:
                plan = solve_ocp(model, planner_cfg, weights, pos, cfg.forcing, warm)
        except Exception as exc:  # keep flying on a solver failure
            logger.error("step %d: planner failed (%s); keeping previous target", t, exc)
            rec.failed = True
            rec.error = f"{type(exc).__name__}: {exc}"
            if prev_plan is not None and len(prev_plan.waypoints) > 1:
                target = prev_plan.waypoints[1]
                prev_plan = Plan(prev_plan.waypoints[1:], prev_plan.objective, 0.0, 0, 0.0, False)
            else:
                target = pos
            warm = None
        else:
            rec.waypoints = plan.waypoints.tolist()
            rec.objective = plan.objective
            rec.iterations = plan.iterations
            rec.converged = plan.converged
            rec.setup_s = plan.setup_time
            rec.solve_s = plan.solve_time
            prev_plan = plan
            target = plan.waypoints[0]
            warm = shift_warm_start(plan)
        steps.append(rec)
        travelled += float(np.linalg.norm(target - pos))
        pos = np.asarray(target, dtype=float)
    meta = {"planner": planner_kind, "horizon": horizon}
    return MissionLog(planner_kind, horizon, cfg.seed, steps, model, init.total_p, meta)


def _run_static(scenario: Scenario, planner_cfg: PlannerConfig, weights: CostWeights,
                n_static: int, scale_budget: bool) -> MissionLog:
    """Plan once on the prior, execute blind, then evaluate post hoc."""
    cfg = scenario.cfg
    prior_model = empty_model(scenario.prior, cfg.kernel)
    init = evaluate(prior_model, scenario.truth, cfg.gamma)
    start = np.asarray(cfg.start, dtype=float)
    plan = static_plan(prior_model, weights, start, n_static, planner_cfg, cfg.forcing, scale_budget)
    rng = make_rng(cfg.seed, STREAM_MEASUREMENT)
    n = min(cfg.n_steps, n_static + 1)
    positions = [start] + [np.asarray(w) for w in plan.waypoints]
    meas = [take_measurement(scenario.truth, positions[t], cfg.measurement_noise_sd, rng) for t in range(n)]
    # post-hoc evaluation, one measurement at a time
    model = prior_model
    steps = []
    travelled = 0.0
    for t in range(n):
        model = add_measurement(model, meas[t])
        met = evaluate(model, scenario.truth, cfg.gamma)
        first = t == 0
        rec = StepRecord(
            t, (float(positions[t][0]), float(positions[t][1])), meas[t].value, meas[t].noise_sd,
            plan.waypoints.tolist() if first else None, plan.objective if first else None,
            plan.iterations if first else 0, plan.converged if first else None,
            met.total_p, met.binary_rate, travelled,
            setup_s=plan.setup_time if first else float("nan"),
            solve_s=plan.solve_time if first else float("nan"),
        )
        steps.append(rec)
        if t + 1 < len(positions):
            travelled += float(np.linalg.norm(positions[t + 1] - positions[t]))
    meta = {"planner": "static", "horizon": n_static, "gp_updates_during_execution": 0}
    return MissionLog("static", n_static, cfg.seed, steps, model, init.total_p, meta)


# -- config glue --------------------------------------------------------------------

def scenario_from_config(cfg: dict, seed: int | None = None) -> ScenarioConfig:
    from .fgrid import read_fgrid as _rf

    sc = cfg["scenario"]
    grid = GridDomain(float(sc["side_s"]), int(sc["res_opt"]), int(sc["res_eval"]), ell_hint=float(sc["ell"]))
    forcing = None
    if sc.get("current_east") or sc.get("wind"):
        wind = tuple(sc.get("wind") or (0.0, 0.0))
        if sc.get("current_east"):
            e, se = _rf(sc["current_east"])
            nrt, sn = _rf(sc["current_north"])
            if not math.isclose(se, grid.side_s) or not math.isclose(sn, grid.side_s):
                raise ValueError("current field side length must match the scenario")
            forcing = EnvForcing(e, nrt, grid.side_s, wind)
        else:
            forcing = EnvForcing.uniform((0.0, 0.0), grid.side_s, wind)
    return ScenarioConfig(
        grid=grid,
        kernel=KernelParams(float(sc["sigma2"]), float(sc["ell"])),
        gamma=float(sc["gamma"]),
        measurement_noise_sd=float(sc["measurement_noise_sd"]),
        noise_prior_variance=float(sc["noise_prior_variance"]),
        noise_prior_length=sc["noise_prior_length"],
        noise_mode=sc["noise_mode"],
        n_steps=int(sc["n_steps"]),
        seed=int(sc["seed"] if seed is None else seed),
        truth=sc["truth"],
        truth_seed=sc["truth_seed"],
        truth_level=sc["truth_level"],
        start=tuple(float(v) for v in sc["start"]),
        forcing=forcing,
    )


def planner_from_config(cfg: dict, grid: GridDomain, horizon: int | None = None) -> PlannerConfig:
    pc = cfg["planner"]
    la = pc["lookahead_noise_sd"]
    return PlannerConfig(
        horizon_n=int(horizon if horizon is not None else pc["horizon_n"]),
        l_max=float(pc["l_max"]),
        bounds=grid,
        variance_mode=pc["variance_mode"],
        max_iters=int(pc["max_iters"]),
        kkt_tol=float(pc["kkt_tol"]),
        constraint_tol=float(pc["constraint_tol"]),
        lookahead_noise_sd=float(cfg["scenario"]["measurement_noise_sd"] if la is None else la),
        multistart=bool(pc["multistart"]),
        n_starts=int(pc["n_starts"]),
        two_opt=bool(pc["two_opt"]),
        ngon_restart=bool(pc["ngon_restart"]),
    )


def weights_from_config(cfg: dict) -> CostWeights:
    c = cfg["cost"]
    return CostWeights(
        gamma=float(cfg["scenario"]["gamma"]),
        lambda1=float(c["lambda1"]),
        lambda2=float(c["lambda2"]),
        lambda3=float(c["lambda3"]),
        leaky_slope=float(c["leaky_slope"]),
        eps_current=float(c["eps_current"]),
        gate_tau=float(c["gate_tau"]),
        current_index=c["current_index"],
    )


def run_from_config(cfg: dict, kind: str | None = None, horizon: int | None = None,
                    seed: int | None = None) -> MissionLog:
    """Build the scenario and run one mission as described by a loaded config."""
    kind = kind or cfg["planner"]["kind"]
    sc = scenario_from_config(cfg, seed)
    scenario = make_scenario(sc)
    pcfg = planner_from_config(cfg, sc.grid, horizon)
    w = weights_from_config(cfg)
    n_static = int(horizon) if (kind == "static" and horizon is not None) else int(cfg["planner"]["n_static"])
    log = run_mission(scenario, kind, pcfg, w, n_static, bool(cfg["planner"]["scale_static_budget"]))
    log.meta["config"] = cfg
    return log
