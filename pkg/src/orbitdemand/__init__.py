"""Two-stage demand for orbital shells coupled to a particle-in-a-box debris model."""

from .choice import ChoiceModelParams, choice_probabilities, fit_choice_model
from .core import (
    DEFAULT_GRID, InputError, LaunchAllocation, OrbitalState, PhysicalParams, ShellGrid,
)
from .count import CountModelParams, fit_count_model, predict_launch_total
from .pib import step_year, unadjusted_collision_rates
from .scenario import ScenarioSpec, compare_trajectories, load_scenario, parse_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ChoiceModelParams", "choice_probabilities", "fit_choice_model", "DEFAULT_GRID", "InputError",
    "LaunchAllocation", "OrbitalState", "PhysicalParams", "ShellGrid", "CountModelParams",
    "fit_count_model", "predict_launch_total", "step_year", "unadjusted_collision_rates",
    "ScenarioSpec", "compare_trajectories", "load_scenario", "parse_scenario", "run_scenario",
]
