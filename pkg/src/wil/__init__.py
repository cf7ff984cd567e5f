"""Renewal model of waning and boosted immunity: sampling, simulation, stationary and transient densities."""

__version__ = "0.1.0"

from .model import (AssumptionReport, ModelSpec, flow, hazard_from_density, inverse_flow, mean_time,
                    sample_interjump, support_interval, survival, validate_assumptions)
from .presets import PresetParams, build_preset
from .grids import DensityGrid1D, DensityGrid2D, l1_distance
from .simulator import simulate_ensemble, simulate_trajectory
from .stationary import build_joint_stationary, drift_report, solve_stationary, to_state_coordinates
from .evolution import evolve_until

__all__ = [
    "AssumptionReport", "ModelSpec", "flow", "hazard_from_density", "inverse_flow", "mean_time",
    "sample_interjump", "support_interval", "survival", "validate_assumptions", "PresetParams", "build_preset",
    "DensityGrid1D", "DensityGrid2D", "l1_distance", "simulate_ensemble", "simulate_trajectory",
    "build_joint_stationary", "drift_report", "solve_stationary", "to_state_coordinates", "evolve_until",
]
