"""Numerical audit of update-map covariance under orthogonal basis change.

For an update map ``phi`` and orthogonal ``P``, ``Q`` the conjugation
deviation is

    Delta(phi; G, P, Q) = ||phi(P G Q^T) - P phi(G) Q^T||_F / (||phi(G)||_F + 1e-12)

which vanishes for the polar factor and for Newton-Schulz, and is order one
for the elementwise map ``rho_eps(M)_ij = M_ij / (|M_ij| + eps)``.
"""

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import NotOrthogonalError
from .matcore import derive_rng, frobenius_norm, gaussian_matrix, haar_orthogonal
from .optim import (AdamWState, MuonState, PolarAdamWState, adamw_step, muon_matrix_step,
                    polaradamw_matrix_step)
from .polar import NS_BF16, NS_FULL, exact_polar, newton_schulz

SIGN_LIMIT_EPS = 1e-30
_DENOM_FLOOR = 1e-12

# (label, rows, cols) in table order
REFERENCE_SHAPES = (
    ("W_00 / W_11 layer 0", 8, 1),
    ("W_00 / W_11 layer k", 8, 8),
    ("cg_proj", 8, 44),
    ("DeiT-Tiny attn.qkv", 192, 192),
    ("DeiT-Tiny mlp.fc1", 768, 192),
    ("tiny square", 4, 4),
    ("small square", 16, 16),
    ("medium square", 32, 32),
    ("medium-large square", 128, 128),
    ("tall non-square", 4, 16),
    ("wide non-square", 16, 4),
    ("tall non-square", 8, 32),
    ("wide non-square", 32, 8),
    ("DeiT-Tiny mlp.fc2", 192, 768),
    ("large square", 768, 768),
)

CSV_HEADER = ("shape_label", "rows", "cols", "delta_polar", "delta_ns_fp64",
              "delta_ns_bf16", "delta_rho0_mean", "delta_rho0_std", "n_triples")

# acceptance bands the audit checks itself against
POLAR_BAND = 1e-6
BF16_BAND = (0.005, 0.10)
RHO0_BAND = (0.5, 1.1)


class UpdateMap(enum.Enum):
    EXACT_POLAR = "exact_polar"
    NS_FULL = "ns_full"
    NS_BF16 = "ns_bf16"
    RHO_SIGN = "rho_sign"


def rho_eps(m, eps):
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = np.asarray(m, dtype=np.float64)
    return m / (np.abs(m) + eps)


def apply_map(map_id, g):
    map_id = UpdateMap(map_id)
    if map_id is UpdateMap.EXACT_POLAR:
        return exact_polar(g)
    if map_id is UpdateMap.NS_FULL:
        return newton_schulz(g, NS_FULL)
    if map_id is UpdateMap.NS_BF16:
        return newton_schulz(g, NS_BF16)
    return rho_eps(g, SIGN_LIMIT_EPS)


def _check_orthogonal(name, a, tol=1e-10):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotOrthogonalError(f"{name} must be square, got {a.shape}")
    err = frobenius_norm(a.T @ a - np.eye(a.shape[0]))
    if err > tol:
        raise NotOrthogonalError(f"{name} deviates from orthogonal by {err:.3e}")


def conjugation_deviation(map_id, g, p, q, phi_g=None):
    """Delta for one ``(G, P, Q)``; ``phi_g`` may pass a precomputed ``phi(G)``."""
    _check_orthogonal("P", p)
    _check_orthogonal("Q", q)
    return _deviation(map_id, np.asarray(g, dtype=np.float64), p, q, phi_g)


def _deviation(map_id, g, p, q, phi_g=None, conj_g=None):
    if phi_g is None:
        phi_g = apply_map(map_id, g)
    if conj_g is None:
        conj_g = p @ g @ q.T
    lhs = apply_map(map_id, conj_g)
    rhs = p @ phi_g @ q.T
    return frobenius_norm(lhs - rhs) / (frobenius_norm(phi_g) + _DENOM_FLOOR)


@dataclass
class AuditRow:
    shape_label: str
    rows: int
    cols: int
    delta_polar: float
    delta_ns_full: float
    delta_ns_bf16: float
    delta_rho0_mean: float
    delta_rho0_std: float
    n_triples: int

    def within_bands(self):
        return (self.delta_polar <= POLAR_BAND
                and self.delta_ns_full <= POLAR_BAND
                and BF16_BAND[0] <= self.delta_ns_bf16 <= BF16_BAND[1]
                and RHO0_BAND[0] <= self.delta_rho0_mean <= RHO0_BAND[1])


def shape_stream_label(label, rows, cols):
    return f"{label} ({rows},{cols})"


def audit_shape(label, rows, cols, n_triples, master_seed):
    """Sample ``n_triples`` (G, P, Q) for one shape and aggregate Delta."""
    if n_triples < 1:
        raise ValueError("n_triples must be >= 1")
    rng = derive_rng(master_seed, "audit", shape_stream_label(label, rows, cols))
    maps = tuple(UpdateMap)
    deltas = {m: [] for m in maps}
    for _ in range(n_triples):
        g = gaussian_matrix(rows, cols, rng)
        p = haar_orthogonal(rows, rng)
        q = haar_orthogonal(cols, rng)
        # haar_orthogonal output is orthogonal to ~1e-15; no need to re-check
        conj_g = p @ g @ q.T
        for m in maps:
            deltas[m].append(_deviation(m, g, p, q, conj_g=conj_g))
    rho = np.array(deltas[UpdateMap.RHO_SIGN])
    return AuditRow(
        shape_label=label, rows=rows, cols=cols,
        delta_polar=_mean(deltas[UpdateMap.EXACT_POLAR]),
        delta_ns_full=_mean(deltas[UpdateMap.NS_FULL]),
        delta_ns_bf16=_mean(deltas[UpdateMap.NS_BF16]),
        delta_rho0_mean=_mean(rho),
        delta_rho0_std=float(rho.std(ddof=1)) if rho.size > 1 else 0.0,
        n_triples=n_triples,
    )


def _mean(values):
    # fixed left-to-right summation keeps rows bit-stable
    return math.fsum(values) / len(values)


def run_shape_audit(shapes=REFERENCE_SHAPES, n_triples=50, master_seed=0):
    shapes = list(shapes)
    if not shapes:
        raise ValueError("no shapes to audit")
    return [audit_shape(label, r, c, n_triples, master_seed) for label, r, c in shapes]


def trajectory_deviation(kind, shape=(8, 8), n_steps=5, lr=0.02, seed=0, ns=NS_FULL):
    """Per-step gap between an optimizer run on ``G_t`` and one on ``P G_t Q^T``.

    Both runs start from zero state; the second starts from ``P W_0 Q^T``.
    Step ``t`` reports ``||D'_t - P D_t Q^T||_F / ||D_t||_F`` where ``D_t``
    is the displacement ``W_t - W_0``. A gauge-equivariant optimizer keeps
    this at rounding level.
    """
    if kind not in ("muon", "polaradamw", "adamw"):
        raise ValueError(f"unknown optimizer {kind!r}")
    rows, cols = shape
    rng = derive_rng(seed, "trajectory", kind, f"{rows}x{cols}")
    p = haar_orthogonal(rows, rng)
    q = haar_orthogonal(cols, rng)
    w0 = gaussian_matrix(rows, cols, rng)
    grads = [gaussian_matrix(rows, cols, rng) for _ in range(n_steps)]

    def make_state():
        if kind == "muon":
            return MuonState.zeros(shape, ns=ns)
        if kind == "polaradamw":
            return PolarAdamWState.zeros(shape, ns=ns)
        return AdamWState.zeros(shape)

    step = {"muon": muon_matrix_step, "polaradamw": polaradamw_matrix_step,
            "adamw": adamw_step}[kind]
    state_a, state_b = make_state(), make_state()
    w_a, w_b = w0, p @ w0 @ q.T
    out = []
    for g in grads:
        state_a, w_a = step(state_a, w_a, g, lr)
        state_b, w_b = step(state_b, w_b, p @ g @ q.T, lr)
        moved = w_a - w0
        out.append(frobenius_norm((w_b - p @ w0 @ q.T) - p @ moved @ q.T)
                   / frobenius_norm(moved))
    return out


def counterexample_check(eps):
    """Closed-form scalars of the 2x2 counterexample with ``P = R(pi/4)``.

    Both ``rho_eps(P I Q^T)`` and ``P rho_eps(I) Q^T`` are multiples of
    ``P``; returns ``(lhs_factor, rhs_factor, gap)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    lhs = math.sqrt(2.0) / (1.0 + math.sqrt(2.0) * eps)
    rhs = 1.0 / (1.0 + eps)
    gap = abs(lhs - rhs)
    return lhs, rhs, gap


def counterexample_matrices(eps):
    """The two matrices the closed forms describe, computed entrywise."""
    p = rotation_2d(math.pi / 4)
    m = np.eye(2)
    q = np.eye(2)
    return rho_eps(p @ m @ q.T, eps), p @ rho_eps(m, eps) @ q.T


def rotation_2d(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# -- output -------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.shape_label, r.rows, r.cols, _fmt(r.delta_polar),
                         _fmt(r.delta_ns_full), _fmt(r.delta_ns_bf16),
                         _fmt(r.delta_rho0_mean), _fmt(r.delta_rho0_std), r.n_triples])
    return buf.getvalue()


def rows_to_table(rows):
    head = ("Shape (n,m)", "D(polar)", "D(NS5 fp64)", "D(NS5 bf16)", "D(rho0)")
    body = [(f"{r.shape_label} ({r.rows},{r.cols})", f"{r.delta_polar:.1e}",
             f"{r.delta_ns_full:.1e}", f"{r.delta_ns_bf16:.1e}",
             f"{r.delta_rho0_mean:.2f} +/- {r.delta_rho0_std:.2f}") for r in rows]
    widths = [max(len(line[i]) for line in (head, *body)) for i in range(len(head))]
    fmt = lambda line: "  ".join(  # noqa: E731
        cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(line, widths)))
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt(head), sep, *map(fmt, body)]) + "\n"


def row_as_dict(row):
    return asdict(row)
