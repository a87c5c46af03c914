"""Federated learning simulator for measuring participant contribution under attack."""

from fedcontrib._backend import BACKEND
from fedcontrib.core_ml import (
    Dataset,
    ModelParams,
    TrainConfig,
    compute_gradient,
    evaluate,
    make_synthetic_task,
    train_local,
)

__all__ = [
    "BACKEND",
    "Dataset",
    "ModelParams",
    "TrainConfig",
    "compute_gradient",
    "evaluate",
    "make_synthetic_task",
    "train_local",
]
__version__ = "0.1.0"
