import numpy as np
import pytest

from tsci.errors import PerfectFitError
from tsci.strength import (StrengthResult, late_passes, mu_hat, q_max, strength_bootstrap_quantile,
                           strength_test, upper_quantile)
from tsci.violation import polynomial_violation_basis, transform_matrix

from conftest import toy_forest_omega


def result(q, passed):
    return StrengthResult(q=q, mu_hat=0.0, trace_m=0.0, threshold=10.0, s_quantile=0.0, passed=passed)


def test_mu_hat_identity_zero_fit(rng):
    d = rng.normal(size=15)
    assert mu_hat(d, np.zeros(15), np.eye(15)) == pytest.approx(15)


def test_mu_hat_orthogonal_treatment():
    m = np.diag([1.0, 0.0, 0.0])
    assert mu_hat(np.array([0.0, 1.0, 2.0]), np.zeros(3), m) == 0.0


def test_mu_hat_perfect_fit():
    with pytest.raises(PerfectFitError):
        mu_hat(np.ones(3), np.ones(3), np.eye(3))


def test_quantile_zero_residuals():
    d = np.arange(5.0)
    assert strength_bootstrap_quantile(d, np.eye(5), d) == 0.0


def test_quantile_zero_transform(rng):
    d = rng.normal(size=60)
    assert strength_bootstrap_quantile(d * 0.5, np.zeros((60, 60)), d) == 0.0


def test_quantile_deterministic_and_monotone(rng):
    om, (y, d, z, x) = toy_forest_omega(80, 2)
    m = transform_matrix(om, polynomial_violation_basis(z, 1), np.ones((80, 1)))
    f = om.predict(d)
    a = strength_bootstrap_quantile(f, m, d, 0.025, 200, seed=4)
    assert a == strength_bootstrap_quantile(f, m, d, 0.025, 200, seed=4)
    assert a >= 0
    qs = [strength_bootstrap_quantile(f, m, d, a0, 200, seed=4) for a0 in (0.01, 0.05, 0.2, 0.4)]
    assert all(x >= y for x, y in zip(qs[:-1], qs[1:]))


def test_quantile_preconditions(rng):
    d = rng.normal(size=10)
    with pytest.raises(ValueError):
        strength_bootstrap_quantile(d * 0, np.eye(10), d, alpha0=0.6)
    with pytest.raises(ValueError):
        strength_bootstrap_quantile(d * 0, np.eye(10), d, l=10)


def test_upper_quantile_rank():
    v = np.arange(1.0, 301.0)
    # ceil(0.025 * 300) = 8th largest
    assert upper_quantile(v, 0.025) == 293.0
    assert upper_quantile([3.0], 0.025) == 3.0


def test_strength_test_thresholds():
    om, (y, d, z, x) = toy_forest_omega(80, 1)
    m = transform_matrix(om, polynomial_violation_basis(z, 0), np.ones((80, 1)))
    res = strength_test(0, d, om.predict(d), m, l=100)
    assert res.threshold == max(2 * m.trace_m, 10.0)
    assert res.passed == (res.mu_hat >= res.threshold + res.s_quantile)


def test_weak_mu_fails():
    # mu_hat = 5 can never clear the floor of 10
    d = np.array([1.0, -1.0, 1.0, -1.0, 2.0])
    f = np.zeros(5)
    mu = mu_hat(d, f, np.eye(5))
    assert mu == pytest.approx(5.0)
    res = StrengthResult(q=0, mu_hat=mu, trace_m=5.0, threshold=10.0, s_quantile=0.0,
                         passed=mu >= 10.0)
    assert not res.passed


def test_tie_passes():
    # constant first-stage residual: sigma^2 = 1 and no bootstrap spread, mu lands exactly on 10
    from tsci.violation import TransformMatrix
    f = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    d = f + 1.0
    m = np.zeros((5, 5))
    m[0, 0] = 2.5
    tm = TransformMatrix(m=m, trace_m=2.5, trace_m2=6.25, r=0)
    res = strength_test(0, d, f, tm, l=60)
    assert res.mu_hat == 10.0 and res.s_quantile == 0.0 and res.threshold == 10.0
    assert res.passed


def test_q_max_scan():
    assert q_max([result(q, True) for q in range(4)]) == 3
    assert q_max([result(0, True), result(1, False), result(2, True)]) == 0
    assert q_max([result(0, False), result(1, True)]) is None
    assert late_passes([result(0, True), result(1, False), result(2, True)]) == [2]


def test_binary_instrument_chain_caps_q_max():
    rng = np.random.default_rng(0)
    om, (y, d, z, x) = toy_forest_omega(60, 0)
    zb = (z > 0).astype(float)
    from tsci.violation import violation_chain
    chain = violation_chain(zb, 3, np.ones((60, 1)))
    assert len(chain) - 1 <= 1


def test_numerator_monotone_along_chain():
    om, (y, d, z, x) = toy_forest_omega(90, 6)
    w = np.column_stack([np.ones(90), x])
    nums = [d @ transform_matrix(om, polynomial_violation_basis(z, q), w).m @ d for q in range(4)]
    assert all(b <= a + 1e-9 for a, b in zip(nums[:-1], nums[1:]))
