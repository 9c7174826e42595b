from __future__ import annotations

import math

import numpy as np
import pytest

from ustat_gauss.apps import _sep_parts
from ustat_gauss.errors import ConfigurationError
from ustat_gauss.marginals import ScenarioConfig
from ustat_gauss.scenarios import build_scenario, hat_matrix, weak_iv_sizes
from ustat_gauss.statistics import j2, j2_v, statistic_vector


def test_weak_iv_sizes():
    assert weak_iv_sizes(100, "case-i") == (2, 100.0)
    assert weak_iv_sizes(100, "case-ii") == (22, 22.0)
    K, mu2 = weak_iv_sizes(100, "case-iii")
    assert K == 22 and mu2 == pytest.approx(math.sqrt(22))
    with pytest.raises(ConfigurationError):
        weak_iv_sizes(100, "case-iv")
    with pytest.raises(ConfigurationError):
        weak_iv_sizes(5, "case-i", {"K": 5})


def test_hat_matrix_is_projection():
    z = np.random.default_rng(0).standard_normal((12, 3))
    P = hat_matrix(z)
    assert np.allclose(P @ P, P, atol=1e-12) and np.allclose(P @ z, z, atol=1e-12)


def test_weak_iv_kernel_sums_to_jive_numerator():
    cfg = ScenarioConfig("weak-iv", 15, 3, seed=2, params={"regime": "case-ii"})
    sc = build_scenario(cfg)
    d = sc.design
    v = sc.sample(0).values
    eps = v[:, 0]
    u = d["rho"] * v[:, 0] + math.sqrt(1 - d["rho"] ** 2) * v[:, 1]
    n, mu = 15, math.sqrt(d["mu2"])
    for j in range(3):
        P = d["P"][j]
        P0 = P - np.diag(np.diag(P))
        lin = np.sum((1 - np.diag(P)) * (d["Z"][j] @ d["pi"][j]) * u) / (mu * math.sqrt(n))
        quad = eps @ P0 @ u / d["mu2"]
        assert j2(v, sc.kernels, j) == pytest.approx(lin + quad, rel=1e-12)


def test_designs_fixed_across_replications():
    cfg = ScenarioConfig("plm", 20, 3, seed=5, replications=4)
    a, b = build_scenario(cfg), build_scenario(cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.design["M"], b.design["M"]))
    assert not np.array_equal(a.sample(0).values, a.sample(1).values)


def test_plm_v_statistic_is_score():
    sc = build_scenario(ScenarioConfig("plm", 20, 3, seed=1))
    v = sc.sample(0).values
    for j in range(3):
        M = sc.design["M"][j]
        score = v[:, 0] @ M @ v[:, 1] / math.sqrt(20)
        assert j2_v(v, sc.kernels, j) == pytest.approx(score, rel=1e-12)


def test_sep_exchangeable_v_statistic_is_part_ii():
    n, m, p = 6, 4, 3
    sc = build_scenario(ScenarioConfig("sep-exchangeable", n, p, seed=3, params={"m": m}))
    v = sc.sample(0).values
    _, part2 = _sep_parts(v, np.zeros((n, m, p)), n, sc.design["coef"])
    assert statistic_vector(v, sc.kernels, "V") == pytest.approx(part2, rel=1e-12)


def test_unknown_kernel_kind():
    with pytest.raises(ConfigurationError):
        build_scenario(ScenarioConfig("two-sample", 5, 3, params={"kernel": "laplace"}))
