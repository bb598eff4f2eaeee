"""Supervised maximum-likelihood learning of neural Gaussian state-space models.

Dynamic and measurement functions are three-layer perceptrons; they and the
process/measurement noise covariances are fitted by coordinate ascent on the
Gaussian log-likelihood, then plugged into an unscented Kalman filter.
"""

from .config import ExperimentConfig, parse_config, parse_config_text
from .datagen import Dataset, Trajectory, generate_dataset, load_dataset, save_dataset
from .experiment import RmseReport, run_experiment
from .ssm import ScenarioConfig
from .trainer import TrainConfig, TrainingReport, coordinate_ascent_train
from .ukf import UtParams, filter_sequence

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "RmseReport",
    "ScenarioConfig",
    "TrainConfig",
    "TrainingReport",
    "Trajectory",
    "UtParams",
    "coordinate_ascent_train",
    "filter_sequence",
    "generate_dataset",
    "load_dataset",
    "parse_config",
    "parse_config_text",
    "run_experiment",
    "save_dataset",
]
