"""Drift-plus-penalty control simulator for sensor networks with mixed power sources."""

from .baseline import run_baseline_simulation, update_baseline_queue
from .env import EnvSampler, EnvState, sample_env
from .metrics import RunReport, compute_B, slot_objective
from .model import (
    ConfigError,
    NetworkModel,
    compute_bounds,
    default_config,
    default_model,
    load_config,
    optimal_rho,
    validate_config,
    worst_case_delay_bound,
)
from .scheduler import CLCA, NEELY, Simulation, SlotDecision, Variant, run_simulation, run_slot

__all__ = [
    "CLCA",
    "NEELY",
    "ConfigError",
    "EnvSampler",
    "EnvState",
    "NetworkModel",
    "RunReport",
    "Simulation",
    "SlotDecision",
    "Variant",
    "compute_B",
    "compute_bounds",
    "default_config",
    "default_model",
    "load_config",
    "optimal_rho",
    "run_baseline_simulation",
    "run_simulation",
    "run_slot",
    "sample_env",
    "slot_objective",
    "update_baseline_queue",
    "validate_config",
    "worst_case_delay_bound",
]
