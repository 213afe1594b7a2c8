"""Online look-ahead Gaussian-process path planning for threshold (bloom) mapping."""

__version__ = "0.1.0"

from .gp_field import (
    DomainError,
    GpModel,
    GridDomain,
    KernelParams,
    Measurement,
    PriorField,
    SingularityError,
    add_measurement,
    empty_model,
    fit,
    lookahead_var_bcm,
    lookahead_var_exact,
    posterior,
    posterior_field,
)
from .objective import CostWeights, EnvForcing, Objective, misclass_prob, objective_value_and_grad, total_misclass
from .planner import Plan, PlannerConfig, greedy_plan, solve_ocp, static_plan
from .mission import MissionLog, Scenario, ScenarioConfig, evaluate, make_scenario, run_mission
from .experiment import ComparisonSpec, SummaryStats, run_comparison, timing_table

__all__ = [
    "ComparisonSpec", "CostWeights", "DomainError", "EnvForcing", "GpModel", "GridDomain", "KernelParams",
    "Measurement", "MissionLog", "Objective", "Plan", "PlannerConfig", "PriorField", "Scenario",
    "ScenarioConfig", "SingularityError", "SummaryStats", "add_measurement", "empty_model", "evaluate",
    "fit", "greedy_plan", "lookahead_var_bcm", "lookahead_var_exact", "make_scenario", "misclass_prob",
    "objective_value_and_grad", "posterior", "posterior_field", "run_comparison", "run_mission",
    "solve_ocp", "static_plan", "timing_table", "total_misclass",
]
