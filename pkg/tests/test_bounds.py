from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ustat_gauss.bounds import D2_NAMES, composite_from_terms, delta1_prime_from, delta_report, log_floor
from ustat_gauss.errors import UsageError
from ustat_gauss.hoeffding import ProjectionOracle
from ustat_gauss.kernels import make_polynomial, zero_family
from ustat_gauss.marginals import MarginalModel, Normal, ScenarioConfig
from ustat_gauss.scenarios import build_scenario


def normals(n):
    return tuple(MarginalModel(i, (Normal.of(),)) for i in range(n))


def poly(n, a01, a11, p=3):
    c = np.zeros((p, 2, 2))
    c[:, 0, 1] = c[:, 1, 0] = a01
    c[:, 1, 1] = a11
    return make_polynomial(c, n=n)


@pytest.mark.parametrize("n", [4, 6, 9])
def test_product_kernel_contraction_term(n):
    # psi = xy, iid N(0, 1): sigma^2 = n(n-1)/2 and every contraction norm is 1
    fam = poly(n, 0.0, 1.0)
    rep = delta_report(fam, ProjectionOracle(fam, normals(n)), mc_draws=30)
    assert rep.delta1_0 == pytest.approx(2 * n / (n - 1), rel=1e-12)
    assert rep.projection["delta1_0"] == pytest.approx(2 * n / (n - 1), rel=1e-12)


def test_degenerate_kernel_has_no_linear_terms():
    fam = poly(6, 0.0, 1.0)
    rep = delta_report(fam, ProjectionOracle(fam, normals(6)), mc_draws=30)
    for k in ("delta1_1", "d21_1", "d21_2"):
        assert rep.projection[k] <= 1e-12


def test_additive_kernel_has_no_quadratic_terms():
    fam = poly(6, 1.0, 0.0)
    rep = delta_report(fam, ProjectionOracle(fam, normals(6)), mc_draws=30)
    for k in ("delta1_0", "d22_1", "d22_2", "d22_3", "d22_4", "d22_5"):
        assert rep.projection[k] <= 1e-12
    assert rep.projection["d21_1"] > 0


def test_zero_family_gives_zero_terms():
    z = zero_family(5, 3)
    rep = delta_report(z, ProjectionOracle(z, normals(5)), mc_draws=20, allow_degenerate=True)
    assert rep.delta1_0 == 0 and rep.delta1_1 == 0
    assert all(rep.delta2_terms[k] == 0 for k in D2_NAMES)
    assert rep.composite_bound == 0


def test_q_range():
    fam = poly(4, 0.0, 1.0)
    with pytest.raises(UsageError):
        delta_report(fam, ProjectionOracle(fam, normals(4)), q=3.0)


@pytest.mark.parametrize("form", ["U", "V"])
def test_report_is_finite_and_serializes(form):
    cfg = ScenarioConfig("product-kernel", 8, 3, seed=2, params={"form": form})
    sc = build_scenario(cfg)
    rep = delta_report(sc.kernels, sc.oracle(), form=form, mc_draws=30)
    assert math.isfinite(rep.composite_bound) and rep.composite_bound > 0
    assert all(v >= 0 for v in rep.delta2_terms.values())
    d = json.loads(rep.to_json())
    assert d["form"] == form and set(d["delta2_terms"]) == set(D2_NAMES)
    rows = rep.csv_rows()
    assert rows[0][:3] == (8, 3, 4.0) and rows[-1][3] == "composite_bound"


def test_report_deterministic():
    sc = build_scenario(ScenarioConfig("weak-iv", 20, 4, seed=1, params={"regime": "case-ii"}))
    a = delta_report(sc.kernels, sc.oracle(), mc_draws=20, seed=3).to_json()
    b = delta_report(sc.kernels, sc.oracle(), mc_draws=20, seed=3).to_json()
    assert a == b


def test_subsampled_contraction_is_flagged():
    sc = build_scenario(ScenarioConfig("product-kernel", 12, 3, seed=0))
    rep = delta_report(sc.kernels, sc.oracle(), mc_draws=10, max_tuples=100, sub_tuples=500)
    assert rep.subsampling["subsampled"] and rep.subsampling["delta1_0_is_lower_bound"]
    assert rep.flags
    full = delta_report(sc.kernels, sc.oracle(), mc_draws=10)
    assert rep.delta1_0 <= full.delta1_0 + 1e-12


def test_log_floor():
    assert log_floor(2) == 1.0 and log_floor(100) == pytest.approx(math.log(100))


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0, 10),
    st.lists(st.floats(0, 10), min_size=7, max_size=7),
    st.integers(0, 6),
    st.floats(0.0, 5.0),
    st.integers(3, 100),
)
def test_composite_monotone_in_each_input(d1, d2, k, bump, p):
    terms = dict(zip(D2_NAMES, d2))
    base = composite_from_terms(d1, terms, p)
    assert base >= 0
    assert composite_from_terms(d1 + bump, terms, p) >= base
    up = dict(terms)
    up[D2_NAMES[k]] += bump
    assert composite_from_terms(d1, up, p) >= base
    assert delta1_prime_from(d1 + bump, 1.0, 1.0, 1.0, p) >= delta1_prime_from(d1, 1.0, 1.0, 1.0, p)
