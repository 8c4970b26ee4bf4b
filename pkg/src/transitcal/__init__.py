"""Transit network simulation and path-choice calibration from fare-card data."""

from .calibration import CalibrationConfig, CalibrationProblem, calibrate, kl_divergence, objective
from .choice import TRUE_PARAMS, ChoiceParams, benchmark_params, choice_probabilities
from .datagen import bundled_small_network, generate_demand, generate_ground_truth
from .network import ChoiceSet, Network, Timetable, commonality_factor, enumerate_choice_set
from .simulator import SimConfig, TapIn, run_simulation
from .surrogate import cors_optimize

__all__ = [
    "CalibrationConfig", "CalibrationProblem", "calibrate", "kl_divergence", "objective",
    "TRUE_PARAMS", "ChoiceParams", "benchmark_params", "choice_probabilities",
    "bundled_small_network", "generate_demand", "generate_ground_truth",
    "ChoiceSet", "Network", "Timetable", "commonality_factor", "enumerate_choice_set",
    "SimConfig", "TapIn", "run_simulation", "cors_optimize",
]
__version__ = "0.1.0"
