"""Synthetic point clouds with rotation-invariant regression targets."""

from dataclasses import dataclass

import numpy as np

from ..matcore import haar_orthogonal

_JACOBI_SWEEPS = 10
_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    target: float


def _sym3_eigvals(a):
    """Eigenvalues of a batch of symmetric 3x3 matrices by cyclic Jacobi.

    Ten sweeps is far past quadratic convergence for 3x3 input; the result
    is accurate to a few ulps of the largest eigenvalue.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    batch = a.shape[:-2]
    eye = np.broadcast_to(np.eye(3), batch + (3, 3))
    for _ in range(_JACOBI_SWEEPS):
        for p, q in _PAIRS:
            apq = a[..., p, q]
            nz = apq != 0.0
            if not np.any(nz):
                continue
            safe = np.where(nz, apq, 1.0)
            # a tiny off-diagonal overflows theta to inf, which gives t = 0
            with np.errstate(over="ignore"):
                theta = (a[..., q, q] - a[..., p, p]) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(nz, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = eye.copy()
            rot[..., p, p] = c
            rot[..., q, q] = c
            rot[..., p, q] = s
            rot[..., q, p] = -s
            a = np.swapaxes(rot, -1, -2) @ a @ rot
            a[..., p, q] = a[..., q, p] = 0.0
    return np.diagonal(a, axis1=-2, axis2=-1)


def second_moment(points):
    points = np.asarray(points, dtype=np.float64)
    return np.swapaxes(points, -1, -2) @ points / points.shape[-2]


def compute_target(points):
    """Largest eigenvalue of ``X^T X / N``; accepts ``(N, 3)`` or ``(B, N, 3)``."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-2] < 1:
        raise ValueError("need at least one point")
    top = _sym3_eigvals(second_moment(points)).max(axis=-1)
    return float(top) if points.ndim == 2 else top


def make_point_clouds(n_clouds, n_points, rng, radius_range=(0.5, 2.0)):
    """Gaussian clouds rescaled by a per-cloud radius; returns ``(X, y)``.

    ``X`` has shape ``(n_clouds, n_points, 3)``.
    """
    if n_points < 3:
        raise ValueError("n_points must be >= 3")
    x = rng.standard_normal((n_clouds, n_points, 3))
    x *= rng.uniform(*radius_range, size=(n_clouds, 1, 1))
    return x, compute_target(x) if n_clouds else np.zeros(0)


def generate_dataset(n_clouds, n_points, rng):
    x, y = make_point_clouds(n_clouds, n_points, rng)
    return [PointCloud(xi, float(yi)) for xi, yi in zip(x, y)]


def random_rotation(rng):
    """Haar-distributed element of SO(3)."""
    r = haar_orthogonal(3, rng)
    if np.linalg.det(r) < 0:
        r[:, 0] = -r[:, 0]
    return r
