"""Input validation helpers shared by the estimator and the CLI."""

import numpy as np

from .exceptions import ShapeMismatchError


def check_matrix(m, name="matrix", allow_empty=False):
    """Return ``m`` as a finite 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {a.shape}")
    if not allow_empty and a.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def check_point_clouds(X):
    """Coerce to a finite ``(n_clouds, n_points, 3)`` array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and X.shape[-1] == 3:
        X = X[None]
    if X.ndim != 3 or X.shape[-1] != 3:
        raise ShapeMismatchError(f"expected (n_clouds, n_points, 3), got {X.shape}")
    if X.shape[0] and X.shape[1] < 1:
        raise ValueError("clouds must contain at least one point")
    if not np.all(np.isfinite(X)):
        raise ValueError("point clouds contain NaN or Inf")
    return X


def check_targets(y, n):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeMismatchError(f"{y.shape[0]} targets for {n} clouds")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain NaN or Inf")
    return y


def parse_float_list(text):
    return [float(tok) for tok in str(text).split(",") if tok.strip()]


def parse_int_list(text):
    return [int(tok) for tok in str(text).split(",") if tok.strip()]
