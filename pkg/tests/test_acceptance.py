"""End-to-end acceptance suite; each test prints one PASS/FAIL line."""
from __future__ import annotations

import json
import time

import numpy as np
import pytest

from conftest import mixed_marginals, random_poly_family
from ustat_gauss import cli
from ustat_gauss.apps import jive2, mmd_adaptive_test, plm, sep_exchangeable_pipeline
from ustat_gauss.audits import (
    audit_marginals,
    audit_max_inequality,
    audit_rosenthal,
    degenerate_first_order,
    degenerate_second_order,
    nonneg_first_order,
    nonneg_second_order,
)
from ustat_gauss.bounds import delta_report
from ustat_gauss.gauss import covariance_from_oracle, rectangle_distance, sample_gaussian
from ustat_gauss.hoeffding import ProjectionOracle, reconstruct
from ustat_gauss.marginals import IndexedSample, ScenarioConfig, draw_values
from ustat_gauss.rng import stream
from ustat_gauss.scenarios import build_scenario
from ustat_gauss.statistics import (
    j2,
    j2_v,
    orthogonality_check,
    statistic_vector,
    verify_drift,
    verify_second_moment_identity,
)


@pytest.fixture
def report(capsys):
    def emit(k: int, name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {k:2d} {name}: {detail}")
        assert ok, detail

    return emit


def test_c01_reconstruction(report):
    t0 = time.perf_counter()
    worst = 0.0
    g = np.random.default_rng(101)
    for case in range(10):
        n, p, deg = int(g.integers(3, 21)), int(g.integers(1, 6)), int(g.integers(1, 4))
        fam = random_poly_family(n, p, deg, seed=case)
        marg = mixed_marginals(n)
        oracle = ProjectionOracle(fam, marg)
        x = IndexedSample(draw_values(marg, stream(101, case, "acceptance")), marg)
        for form in ("U", "V"):
            for j in range(p):
                res = reconstruct(oracle, x, j, form)
                stat = j2(x, fam, j) if form == "U" else j2_v(x, fam, j)
                worst = max(worst, abs(res.residual) / (abs(stat) + 1.0))
    dt = time.perf_counter() - t0
    report(1, "hoeffding reconstruction", worst <= 1e-10 and dt < 10, f"max scaled residual {worst:.2e}, {dt:.1f}s")


def test_c02_drift_identity(report):
    t0 = time.perf_counter()
    zs = {}
    for cfg in (
        ScenarioConfig("weak-iv", 30, 8, seed=1, params={"regime": "case-ii"}),
        ScenarioConfig("two-sample", 10, 4, seed=1, params={"m": 10}),
    ):
        sc = build_scenario(cfg)
        zs[cfg.scenario_kind] = verify_drift(sc.sample(0), sc.kernels, sc.oracle(), draws=100_000, seed=2).max_z
    dt = time.perf_counter() - t0
    ok = max(zs.values()) <= 3 and dt < 60
    report(2, "drift identity", ok, ", ".join(f"{k} max z {v:.2f}" for k, v in zs.items()) + f", {dt:.1f}s")


def test_c03_second_moment_identity(report):
    t0 = time.perf_counter()
    sc = build_scenario(ScenarioConfig("product-kernel", 8, 6, seed=1))
    rep = verify_second_moment_identity(sc.marginals, sc.kernels, sc.oracle(), reps=10_000, seed=3)
    dt = time.perf_counter() - t0
    report(3, "second-moment identity", rep.max_z <= 4 and dt < 120, f"max z {rep.max_z:.2f} over {rep.diff.size} entries, {dt:.1f}s")


ORTHO_CASES = [
    ("product-kernel", {}, 8, 4),
    ("weak-iv", {"regime": "case-ii"}, 12, 4),
    ("plm", {"K": 3}, 12, 4),
    ("two-sample", {"m": 6}, 6, 4),
    ("sep-exchangeable", {"m": 5}, 5, 3),
]


def test_c04_orthogonality(report):
    worst = {}
    for kind, prm, n, p in ORTHO_CASES:
        sc = build_scenario(ScenarioConfig(kind, n, p, seed=1, replications=10_000, params=prm))
        cov, se = orthogonality_check(sc.sample, sc.oracle(), 10_000, sc.form)
        # coordinates with a vanishing linear part have cov = se = 0 up to rounding
        worst[kind] = float(np.max(np.abs(cov) / np.maximum(se, 1e-12)))
    report(4, "projection orthogonality", max(worst.values()) <= 3, ", ".join(f"{k} {v:.2f} SE" for k, v in worst.items()))


# -------------------------------------------------------------- weak IV grid
NS = (25, 50, 100, 200)
REGIMES = ("case-i", "case-ii", "case-iii")
WIV_PARAMS = {"error": "bernoulli", "q": 0.1}
WIV_SEED = 1


@pytest.fixture(scope="module")
def weak_iv_runs():
    out = {}
    for regime in REGIMES:
        for n in NS:
            cfg = ScenarioConfig("weak-iv", n, 16, seed=WIV_SEED, replications=2000, params={"regime": regime, **WIV_PARAMS})
            sc = build_scenario(cfg)
            oracle = sc.oracle()
            cov = covariance_from_oracle(oracle)
            sig = np.sqrt(np.diag(cov.sigma_matrix))
            w = np.stack([statistic_vector(sc.sample(r), sc.kernels) for r in range(2000)]) / sig
            z = sample_gaussian(cov, 20_000, seed=WIV_SEED) / sig
            est = rectangle_distance(w, z, seed=WIV_SEED)
            bound = delta_report(sc.kernels, oracle, mc_draws=50, seed=WIV_SEED).composite_bound
            out[regime, n] = (est.value, est.se, bound)
    return out


def test_c05_gaussian_approximation(report, weak_iv_runs):
    ok, parts = True, []
    for regime in REGIMES:
        d = [weak_iv_runs[regime, n][0] for n in NS]
        good = d[-1] <= 0.7 * d[0] and d[-1] <= 0.12
        ok &= good
        parts.append(f"{regime} d=" + "/".join(f"{v:.3f}" for v in d))
    report(5, "gaussian approximation", ok, "; ".join(parts))


def test_c06_bound_sanity(report, weak_iv_runs):
    ok, parts = True, []
    for regime in REGIMES:
        d25, _, b25 = weak_iv_runs[regime, NS[0]]
        c_hat = d25 / b25
        finite = all(np.isfinite(weak_iv_runs[regime, n][2]) for n in NS)
        dominated = all(weak_iv_runs[regime, n][0] <= c_hat * weak_iv_runs[regime, n][2] for n in NS)
        ok &= finite and dominated
        slack = min(c_hat * weak_iv_runs[regime, n][2] - weak_iv_runs[regime, n][0] for n in NS[1:])
        parts.append(f"{regime} C={c_hat:.3g} min slack (n>25) {slack:.3f}")
    report(6, "bound sanity", ok, "; ".join(parts))


# ------------------------------------------------------------------ audits
AUDIT_NS = (10, 20, 40, 80)


def _audit_cases():
    for r in (1, 2):
        for variant in ("degenerate", "nonneg"):
            for q in (2, 4):
                yield f"max r={r} {variant} q={q}", r, variant, q
    for variant in ("upper", "lower", "sum"):
        yield f"rosenthal {variant}", 2, variant, 4


def _audit(case, n, scale=1.0):
    _, r, variant, q = case
    marg = audit_marginals(n, seed=5)
    if variant in ("upper", "lower", "sum"):
        fam = degenerate_second_order(marg, 8, seed=5)
        return audit_rosenthal(fam.scaled(scale), marg, reps=2000, seed=6, variant=variant).ratio
    build = {
        (1, "degenerate"): degenerate_first_order,
        (1, "nonneg"): nonneg_first_order,
        (2, "degenerate"): degenerate_second_order,
        (2, "nonneg"): nonneg_second_order,
    }[r, variant]
    fam = build(marg, 8, seed=5)
    return audit_max_inequality(fam.scaled(scale), marg, q=q, reps=2000, seed=6, variant=variant).ratio


def test_c07_audits(report):
    ok, worst_growth, worst_scale, failing = True, 0.0, 0.0, []
    for case in _audit_cases():
        ratios = [_audit(case, n) for n in AUDIT_NS]
        growth = max(ratios) / ratios[0]
        worst_growth = max(worst_growth, growth)
        if growth > 2:
            ok = False
            failing.append(f"{case[0]} ratios " + "/".join(f"{r:.4f}" for r in ratios))
        for c in (0.1, 10.0):
            other = _audit(case, AUDIT_NS[0], c)
            dev = abs(other - ratios[0]) / ratios[0]
            worst_scale = max(worst_scale, dev)
            ok &= dev <= 1e-10
    detail = f"max ratio(n)/ratio(10) {worst_growth:.2f}, max scale deviation {worst_scale:.1e}"
    report(7, "maximal-inequality audits", ok, detail + "".join(f"; {f}" for f in failing))


# --------------------------------------------------------------------- MMD
def _mmd_rate(shift: float, reps: int, seed: int) -> float:
    rejects = 0
    for r in range(reps):
        x = stream(seed, r, "acceptance_x").standard_normal(100)
        y = stream(seed, r, "acceptance_y").standard_normal(100) + shift
        rejects += mmd_adaptive_test(x, y, B=499, alpha=0.05, seed=seed, rep_id=r).reject
    return rejects / reps


def test_c08_mmd(report):
    t0 = time.perf_counter()
    size = _mmd_rate(0.0, 1000, 8)
    power = _mmd_rate(0.75, 200, 9)
    dt = time.perf_counter() - t0
    ok = 0.03 <= size <= 0.07 and power >= 0.5 and dt < 600
    report(8, "mmd adaptive test", ok, f"size {size:.3f} (1000 reps), power {power:.3f} (200 reps), {dt:.0f}s")


# ---------------------------------------------------------- JIVE2 and PLM
def test_c09_estimator_exactness(report):
    errs = {}
    g = np.random.default_rng(9)
    n = 60
    z = g.standard_normal((n, 4))
    x = z @ np.ones(4) + g.standard_normal(n)
    errs["jive2 noise-free"] = abs(jive2(0.6 * x, x, z).estimate[0] - 0.6)
    zz = g.standard_normal((6, 2))
    xx, yy = g.standard_normal(6), g.standard_normal(6)
    P = zz @ np.linalg.inv(zz.T @ zz) @ zz.T
    Po = P - np.diag(np.diag(P))
    errs["jive2 dense"] = abs(jive2(yy, xx, zz).estimate[0] - (xx @ Po @ yy) / (xx @ Po @ xx))
    zs = np.sort(g.random(n))
    xs = np.cos(zs) + g.standard_normal(n)
    for basis in ("legendre", "bspline"):
        res = plm(1.3 * xs, xs, zs, 6, basis)
        errs[f"plm {basis} noise-free"] = abs(res.estimate[0] - 1.3)
        errs[f"plm {basis} M^2=M"] = res.diagnostics["M_idempotence"]
        errs[f"plm {basis} MP=0"] = res.diagnostics["M_annihilates_basis"]
    z8 = np.sort(g.random(8))
    x8, y8 = g.standard_normal(8), g.standard_normal(8)
    B = np.polynomial.legendre.legvander(2 * (z8 - z8.min()) / (z8.max() - z8.min()) - 1, 1)
    M = np.eye(8) - B @ np.linalg.inv(B.T @ B) @ B.T
    errs["plm dense"] = abs(plm(y8, x8, z8, 2).estimate[0] - (x8 @ M @ y8) / (x8 @ M @ x8))
    worst = max(errs, key=errs.get)
    report(9, "jive2/plm exactness", errs[worst] <= 1e-10, f"worst {worst} {errs[worst]:.1e}")


def test_c10_gluing(report):
    rep = sep_exchangeable_pipeline(n=50, m=50, p=4, reps=2000, seed=10)
    detail = f"total {rep.total:.3f} <= {rep.delta1:.3f}+{rep.delta2:.3f}+{rep.delta3:.3f} + 4*{rep.combined_se:.3f}"
    report(10, "gluing", bool(rep.holds), detail)


# -------------------------------------------------------------- determinism
def test_c11_determinism(report, tmp_path):
    plans = {
        "simulate": {"config": {"scenario_kind": "weak-iv", "n": 20, "p": 4, "seed": 3, "replications": 50, "params": {"regime": "case-ii"}}, "grid": {"n": [20, 30]}, "options": {"gaussian_draws": 1000}},
        "mmd": {"config": {"scenario_kind": "two-sample", "n": 30, "p": 4, "seed": 3, "params": {"shift": 0.5}}, "options": {"B": 199}},
        "audit": {"config": {"scenario_kind": "product-kernel", "n": 10, "p": 4, "seed": 3, "replications": 200}, "grid": {"n": [10, 20]}},
    }
    bad = []
    for command, body in plans.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps({"schema_version": 1, **body}))
        first, outs = tmp_path / command / "first", []
        assert cli.main([command, "--config", str(path), "--out", str(first)]) == 0
        for threads in ("1", "8"):
            out = tmp_path / command / threads
            assert cli.main([command, "--config", str(first / "manifest.json"), "--out", str(out), "--threads", threads]) == 0
            outs.append(out)
        for f in sorted(first.iterdir()):
            if f.name == "manifest.json":
                continue
            if any((o / f.name).read_bytes() != f.read_bytes() for o in outs):
                bad.append(f"{command}/{f.name}")
    report(11, "determinism", not bad, "all result files byte-identical at 1 and 8 threads" if not bad else f"differs: {bad}")
