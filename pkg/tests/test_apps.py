from __future__ import annotations

import numpy as np
import pytest

from ustat_gauss.apps import (
    bspline_design,
    classify_regime,
    default_bandwidth_grid,
    jive2,
    mmd_adaptive_test,
    plm,
    sep_exchangeable_pipeline,
)
from ustat_gauss.errors import DomainError, SingularityError, UsageError
from ustat_gauss.kernels import make_mmd_family
from ustat_gauss.statistics import j2


@pytest.fixture
def two_samples():
    g = np.random.default_rng(0)
    return g.standard_normal(30), g.standard_normal(25) + 0.3


def test_mmd_statistic_matches_kernel_family(two_samples):
    x, y = two_samples
    hs = [0.3, 1.0, 2.5]
    res = mmd_adaptive_test(x, y, grid=hs, B=199)
    fam = make_mmd_family(30, 25, hs)
    v = np.concatenate([x, y])[:, None]
    assert res.statistics == pytest.approx([j2(v, fam, j) for j in range(3)], rel=1e-10)


def test_mmd_invariant_to_within_sample_relabeling(two_samples):
    x, y = two_samples
    g = np.random.default_rng(1)
    a = mmd_adaptive_test(x, y, B=199)
    b = mmd_adaptive_test(g.permutation(x), g.permutation(y), B=199)
    assert np.allclose(a.statistics, b.statistics, rtol=1e-12, atol=1e-15)


def test_mmd_result_fields(two_samples):
    x, y = two_samples
    res = mmd_adaptive_test(x, y, B=199, seed=4)
    assert 0 < res.p_value <= 1
    assert np.all(np.diff(res.bandwidth_grid) > 0)
    assert res.max_statistic == pytest.approx(res.studentized.max())
    assert res.decision in ("reject", "accept")
    assert len(res.csv_rows()) == len(res.bandwidth_grid)
    again = mmd_adaptive_test(x, y, B=199, seed=4)
    assert again.p_value == res.p_value


def test_mmd_detects_large_shift():
    g = np.random.default_rng(2)
    res = mmd_adaptive_test(g.standard_normal(40), g.standard_normal(40) + 2.0, B=199)
    assert res.reject and res.p_value == pytest.approx(1 / 200)


def test_mmd_argument_checks(two_samples):
    x, y = two_samples
    with pytest.raises(UsageError):
        mmd_adaptive_test(x, y, B=100)
    with pytest.raises(DomainError):
        mmd_adaptive_test(x, y, grid=[0.5, 0.0])
    with pytest.raises(UsageError):
        mmd_adaptive_test(x[:1], y)
    with pytest.raises(UsageError):
        mmd_adaptive_test(x, y, grid=[])


def test_default_grid_spans_rates():
    hs = default_bandwidth_grid(100, 1)
    assert hs[0] == pytest.approx(0.25 * 100 ** (-1.0))
    assert hs[-1] == pytest.approx(4 * 100 ** (-2 / 9))


def _jive_dense(y, x, z):
    n = len(y)
    P = z @ np.linalg.inv(z.T @ z) @ z.T
    num = den = 0.0
    for i in range(n):
        for m in range(n):
            if i != m:
                num += x[i] * P[i, m] * y[m]
                den += x[i] * P[i, m] * x[m]
    return num / den


def test_jive2_hand_case():
    z = np.array([[1.0, 0.5], [0.2, -1.0], [1.5, 0.3], [-0.7, 0.8], [0.4, 1.2], [-1.1, -0.4]])
    x = np.array([1.2, -0.5, 2.0, 0.1, 0.9, -1.3])
    y = np.array([2.1, -0.2, 3.5, 0.6, 1.1, -2.4])
    assert jive2(y, x, z).estimate[0] == pytest.approx(_jive_dense(y, x, z), rel=1e-10)


def test_jive2_noise_free_and_components():
    g = np.random.default_rng(3)
    n = 40
    z = g.standard_normal((n, 3))
    pi = np.array([1.0, 0.5, -0.2])
    eps = g.standard_normal(n)
    x = z @ pi + eps
    assert jive2(1.7 * x, x, z).estimate[0] == pytest.approx(1.7, abs=1e-12)
    u = 0.5 * eps + g.standard_normal(n)
    res = jive2(1.7 * x + u, x, z, theta=[1.7], pi=pi)
    err = res.estimate - 1.7
    assert err == pytest.approx(res.components["linear_term"] + res.components["quadratic_term"], abs=1e-12)


def test_jive2_reparameterization_invariance():
    g = np.random.default_rng(4)
    z = g.standard_normal((30, 3))
    x = z @ np.ones(3) + g.standard_normal(30)
    y = 0.8 * x + g.standard_normal(30)
    a = np.array([[2.0, 0.1, 0.0], [0.3, 1.0, -1.0], [0.0, 0.5, 3.0]])
    assert jive2(y, x, z @ a).estimate == pytest.approx(jive2(y, x, z).estimate, abs=1e-10)


def test_jive2_singular_instruments():
    g = np.random.default_rng(5)
    z = g.standard_normal((20, 2))
    z = np.column_stack([z, z[:, 0] + z[:, 1]])
    with pytest.raises(SingularityError):
        jive2(g.standard_normal(20), g.standard_normal(20), z)
    with pytest.raises(UsageError):
        jive2(np.zeros(3), np.zeros(3), np.ones((3, 3)))


def test_regime_tag():
    assert classify_regime(1.0, 0.1) == "case-i"
    assert classify_regime(1.0, 1.0) == "case-ii"
    assert classify_regime(0.1, 1.0) == "case-iii"


def _plm_dense(y, x, z, K):
    P = np.polynomial.legendre.legvander(2 * (z - z.min()) / (z.max() - z.min()) - 1, K - 1)
    M = np.eye(len(y)) - P @ np.linalg.inv(P.T @ P) @ P.T
    return (x @ M @ y) / (x @ M @ x)


def test_plm_hand_case():
    z = np.array([0.05, 0.2, 0.31, 0.44, 0.58, 0.67, 0.8, 0.93])
    x = np.array([0.5, -1.0, 0.3, 1.2, -0.4, 0.9, -0.2, 0.7])
    y = np.array([1.1, -1.5, 0.2, 2.0, -0.1, 1.6, 0.4, 0.9])
    assert plm(y, x, z, 2).estimate[0] == pytest.approx(_plm_dense(y, x, z, 2), rel=1e-10)


@pytest.mark.parametrize("basis", ["legendre", "bspline"])
def test_plm_noise_free_and_projection(basis):
    g = np.random.default_rng(6)
    n = 50
    z = np.sort(g.random(n))
    x = np.sin(3 * z) + g.standard_normal(n)
    res = plm(2.5 * x, x, z, 6, basis)
    assert res.estimate[0] == pytest.approx(2.5, abs=1e-12)
    assert res.diagnostics["M_idempotence"] < 1e-10
    assert res.diagnostics["M_annihilates_basis"] < 1e-10
    gz, hz = np.cos(2 * z), np.sin(3 * z)
    e = g.standard_normal(n)
    res = plm(2.5 * x + gz + e, x, z, 6, basis, beta=[2.5], g=gz, h=hz)
    total = sum(res.components.values())
    assert np.sqrt(n) * (res.estimate - 2.5) == pytest.approx(total, abs=1e-10)


def test_plm_rank_deficient_basis_named():
    z = np.repeat([0.1, 0.9], 10)
    with pytest.raises(SingularityError, match="legendre"):
        plm(np.arange(20.0), np.ones(20) + np.arange(20.0) % 3, z, 3)
    with pytest.raises(UsageError):
        bspline_design(np.linspace(0, 1, 10), 3)


def test_sep_pipeline_collapses():
    add = sep_exchangeable_pipeline(n=10, m=8, p=3, coef={"a": 1.0, "c": 1.0, "ac": 0.0, "e": 0.0}, reps=300, f_draws=2, gaussian_draws=2000)
    assert add.component_I == 0 and add.delta1 == 0
    assert add.holds
    noise = sep_exchangeable_pipeline(n=10, m=8, p=3, coef={"a": 0.0, "c": 0.0, "ac": 0.0, "e": 1.0}, reps=300, f_draws=2, gaussian_draws=2000)
    assert noise.component_II == 0
    assert noise.holds
