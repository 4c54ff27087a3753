"""Polar factor: exact (via SVD) and the quintic Newton-Schulz approximation."""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NonConvergenceError, ZeroMatrixError
from .matcore import frobenius_norm, round_bf16


class Precision(enum.Enum):
    FULL = "full"
    BF16 = "bf16"


@dataclass(frozen=True)
class NsConfig:
    """Quintic Newton-Schulz settings; defaults are Muon's."""

    coeff_a: float = 3.4445
    coeff_b: float = -4.7750
    coeff_c: float = 2.0315
    iterations: int = 5
    precision: Precision = Precision.FULL

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        object.__setattr__(self, "precision", Precision(self.precision))


NS_FULL = NsConfig()
NS_BF16 = NsConfig(precision=Precision.BF16)


def exact_polar(m):
    """Return ``U @ V.T`` from the SVD of ``m``.

    Only the leading ``min(rows, cols)`` singular pairs enter, which is the
    rectangular-identity convention ``U I~ V.T``; on rank-deficient input
    the zero-singular-value pairs are whatever the SVD routine returned.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"exact_polar needs a nonempty 2-D matrix, got {m.shape}")
    u, _, vt = _thin_svd(m)
    return u @ vt


def _thin_svd(m):
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError(str(exc)) from exc


def newton_schulz(m, cfg=NS_FULL):
    """Approximate ``polar(m)`` with ``cfg.iterations`` quintic NS steps.

    Starts from ``m / ||m||_F`` and iterates ``X <- a X + b X(X^T X) +
    c X(X^T X)^2``, forming the Gram matrix on the smaller side. In bf16
    mode the normalised input, the Gram matrix, its square and each
    iterate are rounded to bfloat16.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"newton_schulz needs a 2-D matrix, got {m.shape}")
    norm = frobenius_norm(m)
    if norm == 0.0:
        raise ZeroMatrixError("cannot normalise a zero matrix")
    tall = m.shape[0] > m.shape[1]
    return ns_iterate(m.T / norm if tall else m / norm, cfg, transposed=tall)


def ns_iterate(x, cfg=NS_FULL, transposed=False):
    """Run the NS iteration on ``x`` as given, without normalising it.

    ``x`` must have rows <= cols (the Gram matrix is ``x @ x.T``); with
    ``transposed=True`` the result is transposed back on return.
    """
    a, b, c = cfg.coeff_a, cfg.coeff_b, cfg.coeff_c
    rnd = round_bf16 if cfg.precision is Precision.BF16 else _identity
    x = rnd(x)
    for _ in range(cfg.iterations):
        gram = rnd(x @ x.T)
        # gram is symmetric; the A @ A.T form lets BLAS use syrk
        gram_sq = rnd(gram @ gram.T)
        x = rnd(a * x + (b * gram + c * gram_sq) @ x)
    return x.T.copy() if transposed else x


def _identity(x):
    return x


def shape_scale(rows, cols):
    """``sqrt(max/min)`` of the two dimensions."""
    if rows < 1 or cols < 1:
        raise ValueError("dimensions must be >= 1")
    return math.sqrt(max(rows, cols) / min(rows, cols))
