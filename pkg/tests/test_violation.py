import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsci.errors import DegenerateError
from tsci.forest import WeightMatrix
from tsci.violation import (ResidualMaker, orthonormal_basis, polynomial_violation_basis,
                            residual_projector, transform_matrix, violation_chain)

from conftest import toy_forest_omega


def test_polynomial_basis_columns():
    vb = polynomial_violation_basis(np.array([1.0, 2.0]), 2)
    np.testing.assert_array_equal(vb.v, [[1, 1], [2, 4]])


def test_polynomial_basis_order_zero_is_empty():
    vb = polynomial_violation_basis(np.arange(5.0), 0)
    assert vb.v.shape == (5, 0) and vb.rank == 0


def test_binary_instrument_powers_collapse():
    z = np.array([0, 1, 1, 0, 1.0])
    vb = polynomial_violation_basis(z, 2)
    assert vb.rank == 1
    assert len(violation_chain(z, 3, np.ones((5, 1)))) == 2


def test_chain_is_nested():
    z = np.linspace(-1, 2, 12)
    chain = violation_chain(z, 3, np.ones((12, 1)))
    for a, b in zip(chain[:-1], chain[1:]):
        np.testing.assert_array_equal(b.v[:, : a.v.shape[1]], a.v)


def test_projector_annihilates_span(rng):
    v, w = rng.normal(size=(20, 2)), np.column_stack([np.ones(20), rng.normal(size=20)])
    p = residual_projector(v, w)
    u = np.hstack([v, w]) @ rng.normal(size=4)
    assert np.abs(p @ u).max() < 1e-10
    np.testing.assert_allclose(p, p.T, atol=1e-14)
    np.testing.assert_allclose(p @ p, p, atol=1e-12)


def test_projector_centering_matrix():
    n = 7
    p = residual_projector(np.zeros((n, 0)), np.ones((n, 1)))
    np.testing.assert_allclose(p, np.eye(n) - np.ones((n, n)) / n, atol=1e-14)


def test_projector_trace_is_rows_minus_rank(rng):
    p = residual_projector(rng.normal(size=(20, 1)), rng.normal(size=(20, 2)))
    assert np.trace(p) == pytest.approx(17)


def test_projector_degenerate():
    with pytest.raises(DegenerateError):
        ResidualMaker(np.eye(3))


def test_orthonormal_basis_drops_duplicates(rng):
    a = rng.normal(size=(10, 2))
    q = orthonormal_basis(np.hstack([a, a[:, :1] * 3]))
    assert q.shape[1] == 2


def test_identity_smoother_gives_projector(rng):
    z, w = rng.normal(size=15), np.ones((15, 1))
    m = transform_matrix(WeightMatrix(np.eye(15), "basis"), z.reshape(-1, 1), w)
    np.testing.assert_allclose(m.m, residual_projector(z.reshape(-1, 1), w), atol=1e-12)


def test_basis_kind_transform_is_idempotent(rng):
    b = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
    q, _ = np.linalg.qr(b)
    om = WeightMatrix(q @ q.T, "basis")
    m = transform_matrix(om, b[:, 1:2], np.ones((30, 1)))
    assert np.linalg.norm(m.m @ m.m - m.m) <= 1e-8 * np.linalg.norm(m.m)


@pytest.mark.parametrize("seed", range(4))
def test_forest_transform_spectrum(seed):
    om, (y, d, z, x) = toy_forest_omega(60, seed)
    w = np.column_stack([np.ones(60), x])
    for q in range(3):
        m = transform_matrix(om, polynomial_violation_basis(z, q), w)
        ev = np.linalg.eigvalsh(m.m)
        assert ev.min() >= -1e-10 and ev.max() <= 1 + 1e-10
        assert m.trace_m2 <= m.trace_m + 1e-12
        assert m.r == np.linalg.matrix_rank(np.hstack([polynomial_violation_basis(z, q).v, w]))


@pytest.mark.parametrize("seed", range(3))
def test_curvature_non_increasing_along_chain(seed):
    om, (y, d, z, x) = toy_forest_omega(80, seed)
    w = np.column_stack([np.ones(80), x])
    curv = [d @ transform_matrix(om, polynomial_violation_basis(z, q), w).m @ d for q in range(4)]
    assert all(b <= a + 1e-9 for a, b in zip(curv[:-1], curv[1:]))


@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=25, deadline=None)
def test_transform_annihilates_violation(seed, p0, p1):
    om, (y, d, z, x) = toy_forest_omega(40, seed % 50, trees=5)
    v = polynomial_violation_basis(z, 2).v
    m = transform_matrix(om, v, np.ones((40, 1)))
    shifted = y + v @ np.array([p0, p1])
    a, b = y @ m.m @ d, shifted @ m.m @ d
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))
