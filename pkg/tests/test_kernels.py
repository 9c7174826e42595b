from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ustat_gauss.errors import ConfigurationError, DomainError, UsageError
from ustat_gauss.kernels import (
    KernelFamily,
    WeightMatrix,
    audit_symmetry,
    check_fourth_moments,
    make_gaussian_smoother,
    make_mmd_family,
    make_polynomial,
    make_two_sample,
    make_weighted,
    mmd_weights,
    zero_family,
)
from ustat_gauss.statistics import j2


def product(x, y):
    return x[..., 0] * y[..., 0]


def test_weighted_kernel_uses_pair_weight():
    w = np.array([[0.0, 2.0, 3.0], [2.0, 0.0, 5.0], [3.0, 5.0, 0.0]])
    fam = make_weighted(WeightMatrix(w), product)
    assert fam.eval(0, 0, 2, np.array([2.0]), np.array([3.0])) == pytest.approx(18.0)
    assert audit_symmetry(fam, 200).passed


def test_asymmetric_weights_rejected():
    with pytest.raises(ConfigurationError, match="not symmetric"):
        WeightMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_polynomial_needs_symmetric_coefficients():
    c = np.zeros((1, 2, 2))
    c[0, 0, 1] = 1.0
    with pytest.raises(ConfigurationError):
        make_polynomial(c, n=3)


def test_asymmetric_kernel_detected():
    def func(j, i, m, x, y):
        return x[..., 0] + 2 * y[..., 0]

    rep = audit_symmetry(KernelFamily(n=4, p=1, func=func), 50)
    assert not rep.passed and rep.violation is not None


def test_two_sample_blocks():
    fam = make_two_sample(2, 3, 1.0, 2.0, -1.0, product, product, product)
    x, y = np.array([1.0]), np.array([1.0])
    assert fam.eval(0, 0, 1, x, y) == 1.0
    assert fam.eval(0, 2, 4, x, y) == 2.0
    assert fam.eval(0, 0, 3, x, y) == -1.0
    assert fam.eval(0, 3, 0, x, y) == -1.0


def test_mmd_statistic_on_duplicated_sample():
    # n = m = 2, second sample a copy of the first: the within blocks give 2 k12 and the
    # cross block -(k0 + k12), so J2 = (k12 - k0) / 2, not zero
    hs = [0.5, 1.0, 2.0]
    fam = make_mmd_family(2, 2, hs)
    v = np.array([[0.3], [-1.1], [0.3], [-1.1]])
    for j, h in enumerate(hs):
        k = make_gaussian_smoother(h)
        k0 = float(k(v[0], v[0]))
        k12 = float(k(v[0], v[1]))
        assert j2(v, fam, j) == pytest.approx((k12 - k0) / 2, rel=1e-13)


def test_mmd_weights():
    assert mmd_weights(3, 4) == (1 / 6, 1 / 12, -1 / 12)


@pytest.mark.parametrize("h", [0.0, -1.0, np.inf])
def test_bandwidth_domain(h):
    with pytest.raises(DomainError):
        make_gaussian_smoother(h)


def test_zero_family_and_scaling():
    z = zero_family(4, 3)
    v = np.arange(4.0)[:, None]
    assert all(j2(v, z, j) == 0.0 for j in range(3))
    fam = make_polynomial(np.array([[[0.0, 1.0], [1.0, 2.0]]]), n=4)
    assert j2(v, fam.scaled(3.0), 0) == pytest.approx(3.0 * j2(v, fam, 0))
    assert fam.subset([0, 0]).p == 2


def test_missing_diagonal_is_usage_error():
    fam = make_weighted(WeightMatrix(np.ones((3, 3))), product)
    with pytest.raises(UsageError):
        fam.diag_eval(0, 0, np.array([1.0]))


def test_fourth_moment_screen_warns_on_infinite_values():
    def func(j, i, m, x, y):
        return np.where(x[..., 0] > 0, np.inf, 1.0)

    fam = KernelFamily(n=3, p=1, func=func)
    draws = np.random.default_rng(0).standard_normal((20, 3, 1))
    with pytest.warns(RuntimeWarning):
        assert not check_fourth_moments(fam, draws)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**16))
def test_gram_is_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((2, 3, 3))
    c = (c + np.swapaxes(c, 1, 2)) / 2
    a = rng.standard_normal((n, n))
    fam = make_polynomial(c, w=WeightMatrix((a + a.T) / 2))
    g = fam.gram(1, rng.standard_normal((n, 1)))
    assert np.allclose(g, g.T, rtol=0, atol=1e-12)
    assert np.all(np.diag(g) == 0)
