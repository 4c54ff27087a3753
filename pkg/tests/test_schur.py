import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polaropt.exceptions import ShapeMismatchError, SpecMismatchError
from polaropt.matcore import derive_rng, haar_orthogonal
from polaropt.polar import NS_FULL, exact_polar, newton_schulz
from polaropt.schur import (IsotypicSpec, MultiplicityBlock, assemble_equivariant,
                            block_newton_schulz, block_polar, extract_blocks, kron_identity)


def random_spec(rng, max_entries=4):
    """Spec with d in {1, 3, 5} and multiplicities in 1..8.

    All blocks share one orientation (all n >= m or all n <= m) so the
    assembled matrix has full rank whenever every block does.
    """
    k = int(rng.integers(1, max_entries + 1))
    tall = bool(rng.integers(2))
    entries = []
    for i in range(k):
        a, b = sorted(rng.integers(1, 9, size=2))
        n_out, m_in = (b, a) if tall else (a, b)
        entries.append((f"l{i}", int(rng.choice([1, 3, 5])), int(m_in), int(n_out)))
    return IsotypicSpec(entries)


def random_blocks(spec, rng):
    return [MultiplicityBlock(e.label, rng.standard_normal((e.mult_out, e.mult_in)))
            for e in spec.entries]


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_kron_identity_examples(rng):
    np.testing.assert_array_equal(kron_identity([[2.0]], 3), 2 * np.eye(3))
    np.testing.assert_array_equal(kron_identity(np.eye(2), 2), np.eye(4))
    b = rng.standard_normal((3, 4))
    k = kron_identity(b, 5)
    assert np.linalg.norm(k) == pytest.approx(np.sqrt(5) * np.linalg.norm(b), rel=1e-14)
    for i, j, r, c in [(0, 0, 0, 0), (2, 3, 4, 4), (1, 2, 0, 3)]:
        assert k[i * 5 + r, j * 5 + c] == (b[i, j] if r == c else 0.0)
    with pytest.raises(ValueError):
        kron_identity(b, 0)


def test_kron_identity_singular_values(rng):
    b = rng.standard_normal((3, 2))
    s_b = np.linalg.svd(b, compute_uv=False)
    s_k = np.linalg.svd(kron_identity(b, 3), compute_uv=False)
    np.testing.assert_allclose(s_k, np.repeat(s_b, 3), rtol=1e-13)


def test_assemble_examples():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    spec = IsotypicSpec([(0, 1, 2, 2)])
    np.testing.assert_array_equal(assemble_equivariant(spec, [MultiplicityBlock(0, b)]), b)
    spec = IsotypicSpec([(0, 1, 1, 1), (1, 3, 1, 1)])
    out = assemble_equivariant(spec, [MultiplicityBlock(0, np.array([[2.0]])),
                                      MultiplicityBlock(1, np.array([[5.0]]))])
    np.testing.assert_array_equal(out, np.diag([2.0, 5.0, 5.0, 5.0]))


def test_assemble_spec_mismatch():
    spec = IsotypicSpec([(0, 1, 2, 2)])
    with pytest.raises(SpecMismatchError):
        assemble_equivariant(spec, [MultiplicityBlock(0, np.eye(3))])
    with pytest.raises(SpecMismatchError):
        assemble_equivariant(spec, [MultiplicityBlock("x", np.eye(2))])
    with pytest.raises(SpecMismatchError):
        assemble_equivariant(spec, [])


def test_spec_validation():
    with pytest.raises(ValueError):
        IsotypicSpec([(0, 1, 1, 1), (0, 3, 1, 1)])
    with pytest.raises(ValueError):
        IsotypicSpec([(0, 0, 1, 1)])
    spec = IsotypicSpec([(0, 1, 2, 3), (1, 3, 4, 1)])
    assert (spec.dim_in, spec.dim_out) == (14, 6)


@given(st.integers(0, 10**6))
def test_extract_assemble_round_trip(seed):
    rng = derive_rng(seed, "schur-round-trip")
    spec = random_spec(rng)
    blocks = random_blocks(spec, rng)
    got, residual = extract_blocks(spec, assemble_equivariant(spec, blocks))
    for a, b in zip(got, blocks):
        assert a.label == b.label
        np.testing.assert_array_equal(a.b, b.b)
    assert residual == 0.0


def test_extract_residual_is_noise_norm(rng):
    spec = IsotypicSpec([("a", 3, 2, 2), ("b", 1, 3, 2)])
    blocks = random_blocks(spec, rng)
    noise = rng.standard_normal((spec.dim_out, spec.dim_in))
    # project the noise off the equivariant subspace: the oracle computes
    # the projection coefficients directly as diagonal averages
    proj_blocks, _ = extract_blocks(spec, noise)
    noise -= assemble_equivariant(spec, proj_blocks)
    _, residual = extract_blocks(spec, assemble_equivariant(spec, blocks) + noise)
    assert residual == pytest.approx(np.linalg.norm(noise), rel=1e-12)


def test_extract_d1_uses_diagonal_blocks(rng):
    spec = IsotypicSpec([("a", 1, 2, 2), ("b", 1, 1, 3)])
    m = rng.standard_normal((5, 3))
    blocks, residual = extract_blocks(spec, m)
    np.testing.assert_array_equal(blocks[0].b, m[:2, :2])
    np.testing.assert_array_equal(blocks[1].b, m[2:, 2:])
    off = np.linalg.norm(m[:2, 2:]) ** 2 + np.linalg.norm(m[2:, :2]) ** 2
    assert residual == pytest.approx(np.sqrt(off), rel=1e-12)


def test_extract_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        extract_blocks(IsotypicSpec([(0, 3, 1, 1)]), np.eye(2))


def test_block_polar_keeps_orthogonal(rng):
    spec = IsotypicSpec([("a", 3, 4, 4), ("b", 5, 2, 2)])
    blocks = [MultiplicityBlock("a", haar_orthogonal(4, rng)),
              MultiplicityBlock("b", haar_orthogonal(2, rng))]
    for a, b in zip(block_polar(spec, blocks), blocks):
        np.testing.assert_allclose(a.b, b.b, atol=1e-12)


def test_block_polar_single_d1(rng):
    spec = IsotypicSpec([("a", 1, 3, 5)])
    b = rng.standard_normal((5, 3))
    np.testing.assert_allclose(block_polar(spec, [MultiplicityBlock("a", b)])[0].b,
                               exact_polar(b), atol=1e-14)


def test_block_polar_matches_ambient_twenty_specs():
    for i in range(20):
        rng = derive_rng(0, "block-polar", i)
        spec = random_spec(rng)
        blocks = random_blocks(spec, rng)
        ambient = assemble_equivariant(spec, blocks)
        want = exact_polar(ambient)
        got = assemble_equivariant(spec, block_polar(spec, blocks))
        assert rel(got, want) <= 1e-9
        ns_blocks = assemble_equivariant(spec, block_newton_schulz(spec, blocks, NS_FULL))
        assert rel(ns_blocks, newton_schulz(ambient, NS_FULL)) <= 1e-6


def test_block_ns_needs_shared_normalisation(rng):
    spec = IsotypicSpec([("a", 1, 3, 3), ("b", 3, 3, 3)])
    blocks = [MultiplicityBlock("a", rng.standard_normal((3, 3))),
              MultiplicityBlock("b", 10 * rng.standard_normal((3, 3)))]
    ambient = newton_schulz(assemble_equivariant(spec, blocks))
    shared = assemble_equivariant(spec, block_newton_schulz(spec, blocks))
    separate = assemble_equivariant(
        spec, [MultiplicityBlock(b.label, newton_schulz(b.b)) for b in blocks])
    assert rel(shared, ambient) <= 1e-12
    assert rel(separate, ambient) > 1e-3
