"""
Organisms module for sparse_eta.

Organisms assemble molecules into the working parts of the system: the
spatio-temporal travel-time model, the EM trainer, the traffic simulator,
evaluation metrics and report files, and the experiment pipeline that the
command line drives.
"""

from .st_model import ModelParams, TravelTimeTable, materialize_table
from .em_trainer import EmState, run_em, resume_em, infer_trajectory
from .simulator import GroundTruth, gen_grid_network, gen_ground_truth, gen_corpus, sparsify
from .metrics import tte_metrics, route_accuracy, classify_speed_state, condition_map
from .experiment_runner import ExperimentRunner

__all__ = sorted([
    "ModelParams",
    "TravelTimeTable",
    "materialize_table",
    "EmState",
    "run_em",
    "resume_em",
    "infer_trajectory",
    "GroundTruth",
    "gen_grid_network",
    "gen_ground_truth",
    "gen_corpus",
    "sparsify",
    "tte_metrics",
    "route_accuracy",
    "classify_speed_state",
    "condition_map",
    "ExperimentRunner",
])
