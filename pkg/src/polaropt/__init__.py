"""Muon, AdamW and PolarAdamW update rules with polar-map and gauge tooling."""

from .matcore import derive_rng, frobenius_norm, gaussian_matrix, haar_orthogonal, round_bf16, svd
from .optim import (AdamWState, LrSchedule, MatrixOptimizer, MuonState, PolarAdamWState,
                    adamw_step, lr_at, muon_matrix_step, polaradamw_matrix_step,
                    split_parameters)
from .polar import NS_BF16, NS_FULL, NsConfig, Precision, exact_polar, newton_schulz, shape_scale

__version__ = "0.1.0"

__all__ = [
    "AdamWState", "LrSchedule", "MatrixOptimizer", "MuonState", "NS_BF16", "NS_FULL",
    "NsConfig", "PolarAdamWState", "Precision", "adamw_step", "derive_rng",
    "exact_polar", "frobenius_norm", "gaussian_matrix", "haar_orthogonal", "lr_at",
    "muon_matrix_step", "newton_schulz", "polaradamw_matrix_step", "round_bf16",
    "shape_scale", "split_parameters", "svd",
]
