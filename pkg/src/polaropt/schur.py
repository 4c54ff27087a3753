"""Multiplicity blocks of equivariant linear maps.

An equivariant map between isotypic decompositions is block diagonal with
blocks ``B_lam (x) I_d``, where ``B_lam`` is the ``n_lam x m_lam``
multiplicity matrix and ``d`` the irrep dimension. Blocks are laid out in
the order the IsotypicSpec lists them; within a block, index ``i * d + r`` is
multiplicity channel ``i``, irrep component ``r``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeMismatchError, SpecMismatchError
from .matcore import frobenius_norm
from .polar import NS_FULL, exact_polar, ns_iterate


@dataclass(frozen=True)
class IsotypicEntry:
    label: object
    irrep_dim: int
    mult_in: int
    mult_out: int


@dataclass(frozen=True)
class MultiplicityBlock:
    label: object
    b: np.ndarray


class IsotypicSpec:
    """Ordered list of ``(label, irrep_dim, mult_in, mult_out)`` entries."""

    def __init__(self, entries):
        self.entries = tuple(IsotypicEntry(*e) if not isinstance(e, IsotypicEntry) else e
                             for e in entries)
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            raise ValueError("isotypic labels must be unique")
        for e in self.entries:
            if e.irrep_dim < 1 or e.mult_in < 0 or e.mult_out < 0:
                raise ValueError(f"invalid entry {e}")

    def __repr__(self):
        return f"IsotypicSpec({[tuple(vars(e).values()) for e in self.entries]})"

    @property
    def dim_in(self):
        return sum(e.irrep_dim * e.mult_in for e in self.entries)

    @property
    def dim_out(self):
        return sum(e.irrep_dim * e.mult_out for e in self.entries)

    def offsets(self):
        """Yield ``(entry, row_offset, col_offset)`` for each block."""
        row = col = 0
        for e in self.entries:
            yield e, row, col
            row += e.irrep_dim * e.mult_out
            col += e.irrep_dim * e.mult_in


def kron_identity(b, d):
    """``B (x) I_d``: entry ``(i*d + r, j*d + c)`` is ``B[i, j] * [r == c]``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return np.kron(np.asarray(b, dtype=np.float64), np.eye(d))


def _check_blocks(spec, blocks):
    if len(blocks) != len(spec.entries):
        raise SpecMismatchError(f"{len(blocks)} blocks for {len(spec.entries)} spec entries")
    for e, blk in zip(spec.entries, blocks):
        if blk.label != e.label:
            raise SpecMismatchError(f"block {blk.label!r} where {e.label!r} expected")
        if blk.b.shape != (e.mult_out, e.mult_in):
            raise SpecMismatchError(
                f"block {e.label!r} has shape {blk.b.shape}, "
                f"expected {(e.mult_out, e.mult_in)}")


def assemble_equivariant(spec, blocks):
    _check_blocks(spec, blocks)
    out = np.zeros((spec.dim_out, spec.dim_in))
    for (e, r0, c0), blk in zip(spec.offsets(), blocks):
        d = e.irrep_dim
        out[r0:r0 + d * e.mult_out, c0:c0 + d * e.mult_in] = kron_identity(blk.b, d)
    return out


def extract_blocks(spec, m):
    """Project ``m`` onto the equivariant subspace.

    Returns the multiplicity blocks (averages over the ``d`` diagonal
    sub-entries) and the Frobenius norm of what the projection leaves out.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (spec.dim_out, spec.dim_in):
        raise ShapeMismatchError(
            f"matrix shape {m.shape} does not match spec {(spec.dim_out, spec.dim_in)}")
    blocks = []
    for e, r0, c0 in spec.offsets():
        d = e.irrep_dim
        sub = m[r0:r0 + d * e.mult_out, c0:c0 + d * e.mult_in]
        sub = sub.reshape(e.mult_out, d, e.mult_in, d)
        diag = np.einsum("irjr->rij", sub)
        # mean as first copy plus mean offset, so equal copies come back bit-exact
        b = diag[0] + (diag - diag[0]).mean(axis=0)
        blocks.append(MultiplicityBlock(e.label, b))
    residual = frobenius_norm(m - assemble_equivariant(spec, blocks))
    return blocks, residual


def block_polar(spec, blocks):
    """Exact polar applied to each multiplicity block separately."""
    _check_blocks(spec, blocks)
    return [MultiplicityBlock(blk.label, exact_polar(blk.b) if blk.b.size else blk.b)
            for blk in blocks]


def block_newton_schulz(spec, blocks, cfg=NS_FULL, scale=None):
    """Newton-Schulz per block under one shared normalisation.

    Each block is divided by ``scale`` (default: Frobenius norm of the
    assembled ambient matrix) and then iterated without renormalising, so
    the result matches ambient NS of the assembled matrix.
    """
    _check_blocks(spec, blocks)
    if scale is None:
        scale = frobenius_norm(assemble_equivariant(spec, blocks))
    out = []
    for blk in blocks:
        if blk.b.size == 0:
            out.append(blk)
            continue
        out.append(MultiplicityBlock(blk.label, _ns_block(blk.b / scale, cfg)))
    return out


def _ns_block(x, cfg):
    tall = x.shape[0] > x.shape[1]
    return ns_iterate(x.T if tall else x, cfg, transposed=tall)
