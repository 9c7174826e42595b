from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ustat_gauss.errors import ConfigurationError
from ustat_gauss.marginals import (
    Bernoulli,
    MarginalModel,
    Mixture,
    Normal,
    ScenarioConfig,
    Uniform,
    draw_values,
    error_shape,
    exact_integral,
    sample,
)
from ustat_gauss.rng import stream


def test_normal_moments_closed_form():
    # N(1, 2^2): E X^2 = 5, E X^3 = mu^3 + 3 mu s^2 = 13
    assert Normal.of(1.0, 2.0).exact_moments[:4] == pytest.approx((1.0, 1.0, 5.0, 13.0))


def test_uniform_moments_closed_form():
    a, b = -1.0, 3.0
    mom = Uniform.of(a, b).raw_moments(5)
    for k in range(6):
        assert mom[k] == pytest.approx((b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a)))


@pytest.mark.parametrize("dist", [Bernoulli.standardized(0.1), Bernoulli.standardized(0.3), Mixture.standardized_skewed()])
def test_standardized_shapes(dist):
    assert dist.mean == pytest.approx(0.0, abs=1e-12)
    assert dist.var == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    mu=st.floats(-2, 2),
    s=st.floats(0.1, 3),
    k=st.integers(1, 6),
)
def test_gauss_rule_exact_up_to_degree(mu, s, k):
    dist = Normal.of(mu, s)
    x, w = dist.quadrature(k)
    mom = dist.raw_moments(2 * k - 1)
    for deg in range(2 * k):
        scale = (abs(mu) + 3 * s + 1.0) ** deg
        assert np.dot(w, x**deg) == pytest.approx(mom[deg], rel=1e-9, abs=1e-11 * scale)


def test_tensor_rule_shape():
    m = MarginalModel(0, (Normal.of(1, 2), Uniform.of(0, 1)))
    x, w = m.quadrature(3)
    assert x.shape == (9, 2) and w.shape == (9,)
    assert w.sum() == pytest.approx(1.0)


def test_exact_integral_polynomial_is_exact():
    m = MarginalModel(0, (Normal.of(0.5, 2.0),))
    est = exact_integral(m, np.polynomial.Polynomial([1.0, 0.0, 1.0]))
    assert est.exact and est.value == pytest.approx(1.0 + 0.25 + 4.0)


def test_exact_integral_mc_within_se():
    m = MarginalModel(0, (Uniform.of(0, 1),))
    est = exact_integral(m, np.exp, budget=20000)
    assert not est.exact
    assert abs(est.value - (math.e - 1)) < 4 * est.se


def test_draws_are_keyed_and_reproducible():
    marg = [MarginalModel(i, (Normal.of(),)) for i in range(4)]
    a = draw_values(marg, stream(5, 2, "sample"))
    b = draw_values(marg, stream(5, 2, "sample"))
    c = draw_values(marg, stream(5, 3, "sample"))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_draw_of_one_index_ignores_other_laws():
    m1 = [MarginalModel(0, (Normal.of(),)), MarginalModel(1, (Normal.of(),))]
    m2 = [MarginalModel(0, (Normal.of(),)), MarginalModel(1, (Uniform.of(),))]
    assert draw_values(m1, stream(1))[0, 0] == draw_values(m2, stream(1))[0, 0]


def test_config_roundtrip_and_validation():
    cfg = ScenarioConfig("weak-iv", 30, 8, seed=4, replications=10, params={"regime": "case-ii"})
    assert ScenarioConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigurationError):
        ScenarioConfig("nope", 30, 8)
    with pytest.raises(ConfigurationError):
        ScenarioConfig("weak-iv", 30, 2)
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_dict({"scenario_kind": "plm", "n": 10, "p": 3, "bogus": 1})


def test_sample_rejects_out_of_range_rep():
    cfg = ScenarioConfig("product-kernel", 5, 3, replications=2)
    assert sample(cfg, 1).values.shape == (5, 1)
    with pytest.raises(ConfigurationError):
        sample(cfg, 2)


def test_error_shape_names():
    assert isinstance(error_shape("normal"), Normal)
    with pytest.raises(ConfigurationError):
        error_shape("cauchy")
