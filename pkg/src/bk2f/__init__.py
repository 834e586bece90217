"""Branching Monte Carlo for the two-factor Black-Karasinski short rate and
next-step quantile predictors (method of moments vs a small perceptron)."""

__version__ = "0.1.0"

from .model import (
    TRAINING_PARAMS,
    VALIDATION_PARAMS,
    G2Stats,
    ModelParams,
    derive_g2,
    mean_S,
    phi,
    theta,
    var_S,
)
from .sim import PercentileDataset, SimConfig, condense_percentiles, generate_dataset
from .mom import destandardize, mom_predict, standardize
from .mlp import MlpModel, TrainConfig, forward, nn_predict, train
from .evaluation import EvalReport, rmse_by_timestep, run_experiment

__all__ = [
    "EvalReport",
    "G2Stats",
    "MlpModel",
    "ModelParams",
    "PercentileDataset",
    "SimConfig",
    "TRAINING_PARAMS",
    "TrainConfig",
    "VALIDATION_PARAMS",
    "condense_percentiles",
    "derive_g2",
    "destandardize",
    "forward",
    "generate_dataset",
    "mean_S",
    "mom_predict",
    "nn_predict",
    "phi",
    "rmse_by_timestep",
    "run_experiment",
    "standardize",
    "theta",
    "train",
    "var_S",
]
