"""Density-calibrated classification with certified confidence bounds."""

from .attack import AttackConfig, AttackResult, alternating_projection, pgd_max_confidence
from .certify import (
    Certificate,
    NoCertificate,
    ball_bound,
    ball_contains_points,
    ball_log_ratio_bound,
    certified_radius,
    low_confidence_census,
    required_distance,
)
from .classifier import ReluClassifier, log_softmax, softmax
from .data import Dataset, augment, load_csv, load_idx, permuted_smoothed_noise, two_moons, uniform_noise
from .density import GaussianMixture, em_init, project_scale_constraint
from .evaluation import EvalReport, auc, aupr, success_rate, test_error
from .metric import MetricTransform, fit_covariance
from .model import CcuModel
from .serialize import load_model, model_fingerprint, save_model
from .training import TrainConfig, TrainingDiverged, loss_and_grads, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackResult",
    "CcuModel",
    "Certificate",
    "Dataset",
    "EvalReport",
    "GaussianMixture",
    "MetricTransform",
    "NoCertificate",
    "ReluClassifier",
    "TrainConfig",
    "TrainingDiverged",
    "alternating_projection",
    "auc",
    "augment",
    "aupr",
    "ball_bound",
    "ball_contains_points",
    "ball_log_ratio_bound",
    "certified_radius",
    "em_init",
    "fit_covariance",
    "load_csv",
    "load_idx",
    "load_model",
    "log_softmax",
    "loss_and_grads",
    "low_confidence_census",
    "model_fingerprint",
    "pgd_max_confidence",
    "permuted_smoothed_noise",
    "project_scale_constraint",
    "required_distance",
    "save_model",
    "softmax",
    "success_rate",
    "test_error",
    "train",
    "two_moons",
    "uniform_noise",
]
