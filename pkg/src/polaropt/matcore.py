"""Dense real matrix kernel.

Matrices are plain 2-D ``float64`` numpy arrays. This module supplies the
handful of primitives the rest of the package builds on: norms, an SVD with
a fixed sign convention, Haar/Gaussian sampling from named random streams,
and bfloat16 rounding emulated in working precision.
"""

import hashlib
import logging
from typing import NamedTuple

import numpy as np

from .exceptions import NonConvergenceError

logger = logging.getLogger(__name__)

BF16_MAX = float.fromhex("0x1.fep127")
_BF16_MIN_NORMAL = 2.0**-126
_BF16_SUBNORMAL_ULP_EXP = -133
_DROP_BITS = 45  # fp64 has 52 fraction bits, bf16 keeps 7
_DROP_MASK = np.uint64((1 << _DROP_BITS) - 1)
_HALF_MINUS_ONE = np.uint64((1 << (_DROP_BITS - 1)) - 1)


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def derive_rng(seed, *labels):
    """Return a Generator for the stream named by ``seed`` and ``labels``.

    Streams for different labels are independent, and the same
    ``(seed, labels)`` always yields the same stream, so parallel tasks can
    each derive their own generator without coordinating.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        digest = hashlib.sha256(str(label).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:8], "little"))
    return np.random.default_rng(np.random.SeedSequence(words))


def frobenius_norm(m):
    return float(np.sqrt(np.sum(np.square(m))))


def svd(m):
    """Full SVD ``m = u @ diag_rect(s) @ v.T`` with a deterministic sign choice.

    Each singular pair is flipped so the largest-magnitude entry of the
    corresponding column of ``u`` is nonnegative; null-space columns of
    ``u`` and ``v`` are normalised the same way independently.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"svd needs a nonempty 2-D matrix, got shape {m.shape}")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError(str(exc)) from exc
    v = vt.T.copy()
    k = s.shape[0]
    u_signs = _column_signs(u)
    u *= u_signs
    v[:, :k] *= u_signs[:k]
    v[:, k:] *= _column_signs(v[:, k:])
    return SvdResult(u, s, v)


def _column_signs(a):
    if a.shape[1] == 0:
        return np.ones(0)
    idx = np.argmax(np.abs(a), axis=0)
    lead = a[idx, np.arange(a.shape[1])]
    return np.where(lead < 0, -1.0, 1.0)


def haar_orthogonal(n, rng):
    """Sample an ``n x n`` orthogonal matrix from the Haar measure.

    QR of a Gaussian matrix, with the columns of Q multiplied by
    ``sign(diag(R))`` so the distribution does not depend on the QR
    routine's sign choices.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def gaussian_matrix(rows, cols, rng):
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return rng.standard_normal((rows, cols))


def round_bf16(m):
    """Round every entry to the nearest bfloat16 value (ties to even).

    The result stays float64; only the representable set changes.
    Magnitudes beyond the bf16 range saturate to +/- BF16_MAX.
    """
    x = np.array(m, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    if flat.size == 0:
        return x
    bits = flat.view(np.uint64)
    mag = np.abs(flat)
    if mag.min() >= _BF16_MIN_NORMAL or not np.any((mag < _BF16_MIN_NORMAL) & (mag > 0)):
        lsb = bits >> np.uint64(_DROP_BITS)
        lsb &= np.uint64(1)
        bits += _HALF_MINUS_ONE
        bits += lsb
        bits &= ~_DROP_MASK
    else:
        normal = mag >= _BF16_MIN_NORMAL
        nb = bits[normal]
        lsb = (nb >> np.uint64(_DROP_BITS)) & np.uint64(1)
        bits[normal] = (nb + _HALF_MINUS_ONE + lsb) & ~_DROP_MASK
        sub = ~normal
        flat[sub] = np.ldexp(
            np.rint(np.ldexp(flat[sub], -_BF16_SUBNORMAL_ULP_EXP)),
            _BF16_SUBNORMAL_ULP_EXP,
        )
    if mag.max() > 0.5 * BF16_MAX:
        over = np.abs(flat) > BF16_MAX
        if np.any(over):
            logger.warning("round_bf16: %d entries saturated", int(over.sum()))
            flat[over] = np.copysign(BF16_MAX, flat[over])
    return x
