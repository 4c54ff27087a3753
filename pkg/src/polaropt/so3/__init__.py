"""SO(3)-equivariant point-cloud regression testbed."""

from .data import PointCloud, compute_target, generate_dataset, make_point_clouds, random_rotation
from .estimator import SO3Regressor
from .model import So3Model, backward, forward, invariance_check, mse_loss, vector_features
from .training import (PairedStats, TrainConfig, TrainResult, paired_stats, run_sweep,
                       summarize_sweep, train)

__all__ = [
    "PairedStats", "PointCloud", "SO3Regressor", "So3Model", "TrainConfig", "TrainResult",
    "backward", "compute_target", "forward", "generate_dataset", "invariance_check",
    "make_point_clouds", "mse_loss", "paired_stats", "random_rotation", "run_sweep",
    "summarize_sweep", "train", "vector_features",
]
