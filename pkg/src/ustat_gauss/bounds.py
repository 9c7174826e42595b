"""Kernel-form and projection-form error-bound quantities and the composite bound.

All norms of fixed functions (``L^2``, ``L^4`` norms, variances, one-index
contractions) are computed on the oracle's node tables, so they are exact for
polynomial kernels in exact mode.  Terms that involve the expectation of a
maximum over random observations are Monte Carlo averages over ``mc_draws``
independent samples and carry standard errors.

Every term is divided by the appropriate power of ``sigma_j``; universal
constants are set to 1.  ``log p`` and ``log(np)`` are floored at 1.

The contraction maximum over ``(i, m, l)`` is exact when ``n^3`` tuples fit the
budget; otherwise a uniform subsample of tuples is used and the reported
value is a lower bound on the term.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import UsageError
from .hoeffding import ProjectionOracle
from .kernels import KernelFamily
from .marginals import draw_values
from .rng import stream
from .statistics import checked_sigma

D2_NAMES = ("d21_1", "d21_2", "d22_1", "d22_2", "d22_3", "d22_4", "d22_5")
CONTRACTION_NODE_CAP = 64
CONTRACTION_FLOPS = 2e10


@dataclass(frozen=True)
class DeltaReport:
    delta1_0: float
    delta1_1: float
    delta1_prime: float
    delta2_terms: dict
    composite_bound: float
    form: str
    q: float
    n: int
    p: int
    se: dict = field(default_factory=dict)
    subsampling: dict = field(default_factory=dict)
    projection: dict = field(default_factory=dict)
    flags: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_rows(self) -> list[tuple]:
        """Rows ``(n, p, q, term_name, value, se)``."""
        rows = [
            ("delta1_0", self.delta1_0),
            ("delta1_1", self.delta1_1),
            ("delta1_prime", self.delta1_prime),
            *[(k, self.delta2_terms[k]) for k in D2_NAMES],
            ("composite_bound", self.composite_bound),
        ]
        return [(self.n, self.p, self.q, name, float(v), float(self.se.get(name, 0.0))) for name, v in rows]


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def log_floor(x: float) -> float:
    return max(math.log(x), 1.0)


def composite_from_terms(d1_prime: float, d2: dict, p: int) -> float:
    """``sqrt(Delta_1') + ((Delta_2(1) + Delta_2(2)) log^5 p)^{1/4}`` with ``C = 1``."""
    lp = log_floor(p)
    total = sum(float(d2[k]) for k in D2_NAMES)
    return math.sqrt(max(d1_prime, 0.0)) + (max(total, 0.0) * lp**5) ** 0.25


def delta1_prime_from(d10: float, d11: float, lin_scale: float, d22_5: float, p: int) -> float:
    lp = log_floor(p)
    return d10 * lp**3 + d11 * lp**2.5 + lin_scale * (max(d22_5, 0.0) * lp**9) ** 0.25


def _lq(samples: np.ndarray, q: float, power: float) -> tuple[float, float]:
    """``||Y||_{L^q}^power`` with a delta-method standard error."""
    y = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(y)):
        return math.inf, math.inf
    if math.isinf(q):
        return float(np.max(y)) ** power, 0.0
    mom = y**q
    m = float(np.mean(mom))
    se_m = float(np.std(mom, ddof=1) / math.sqrt(len(y))) if len(y) > 1 else 0.0
    val = m ** (power / q)
    se = (power / q) * m ** (power / q - 1.0) * se_m if m > 0 else 0.0
    return val, se


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    y = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(y)):
        return math.inf, math.inf
    return float(np.mean(y)), float(np.std(y, ddof=1) / math.sqrt(len(y))) if len(y) > 1 else 0.0


class _ContractionMax:
    """Running maximum of ``||f_{j,(i,m)} *_i f_{k,(i,l)}||^2 / (sigma_j sigma_k)^2``.

    With ``A[j, m] = f(x^i_a, x^m_b)`` and ``G[j, m] = A diag(w^m) A^T`` the
    squared norm is ``sum_{a,a'} w_a w_a' G[j,m][a,a'] G[k,l][a,a']``.
    """

    def __init__(self, n: int, sigma: np.ndarray, tuples: dict[int, np.ndarray] | None):
        self.n = n
        self.inv = 1.0 / sigma**2
        self.tuples = tuples  # None: exact; else i -> array of (m, l)
        self.value = 0.0

    def update(self, i: int, A: np.ndarray, wi: np.ndarray, wm: np.ndarray) -> None:
        if self.tuples is not None and i not in self.tuples:
            return
        p, n, K, _ = A.shape
        G = np.einsum("jmab,mb,jmcb->jmac", A, wm, A)
        V = G * np.sqrt(np.outer(wi, wi))[None, None]
        V = V * self.inv[:, None, None, None]
        V = V.reshape(p, n, K * K)
        others = np.array([m for m in range(n) if m != i])
        if self.tuples is None:
            flat = V[:, others].reshape(p * len(others), K * K)
            H = flat @ flat.T
            best = float(np.max(H)) if H.size else 0.0
        else:
            ml = self.tuples[i]
            Vm = V[:, ml[:, 0]].transpose(1, 0, 2)  # (T, p, K^2)
            Vl = V[:, ml[:, 1]].transpose(1, 2, 0)  # (T, K^2, p)
            best = float(np.max(np.matmul(Vm, Vl)))
        self.value = max(self.value, best)


def _tuple_plan(n: int, p: int, K: int, max_tuples: float, sub_tuples: int, seed: int):
    total = n * (n - 1) ** 2
    if total <= max_tuples and p * p * total * K * K <= CONTRACTION_FLOPS:
        return None, total, total
    count = int(min(sub_tuples, max(1000, CONTRACTION_FLOPS / (p * p * K * K))))
    rng = stream(seed, 0, "contraction_tuples")
    i = rng.integers(0, n, size=count)
    m = (i + rng.integers(1, n, size=count)) % n
    l = (i + rng.integers(1, n, size=count)) % n
    plan = {}
    for ii in np.unique(i):
        sel = i == ii
        plan[int(ii)] = np.stack([m[sel], l[sel]], axis=1)
    return plan, count, total


def delta_report(
    kernels: KernelFamily,
    oracle: ProjectionOracle,
    q: float = 4.0,
    form: str = "U",
    mc_draws: int = 200,
    seed: int = 0,
    sigma: np.ndarray | None = None,
    max_tuples: float = 1e6,
    sub_tuples: int = 100_000,
    allow_degenerate: bool = False,
) -> DeltaReport:
    """All kernel-form bound terms, the composite bound, and the projection-form cross-check.

    For ``form="V"`` the scale ``sigma_j`` is the standard deviation of
    ``sum pi^V_1 + sum_{i<m} pi_2`` (half the full double sum), matching the
    projections the terms are built from.
    """
    if form not in ("U", "V"):
        raise UsageError(f"unknown form {form!r}")
    if not (q >= 4.0):
        raise UsageError("q must lie in [4, inf]")
    if form == "V" and not kernels.has_diag:
        raise UsageError("V-form bounds need the diagonal kernel")
    n, p = kernels.n, kernels.p
    flags: list[str] = []
    if sigma is None:
        var = np.diag(oracle.covariance(form))
        if form == "V":
            var = var / 4.0
        sigma = checked_sigma(var, allow_degenerate)
    sigma = np.where(sigma > 0, sigma, 1.0) if allow_degenerate else np.asarray(sigma, dtype=float)

    tn, tw = oracle.table_nodes, oracle.table_weights
    K = tn.shape[1]
    if oracle.table_subsampled:
        flags.append(f"mc-mode node tables use {K} of {oracle.budget} draws")
    cK = min(K, CONTRACTION_NODE_CAP)
    if cK < K:
        flags.append(f"contractions use the first {cK} of {K} table nodes")
    cw = tw[:, :cK] / tw[:, :cK].sum(axis=1, keepdims=True)

    plan, tuples_used, tuples_total = _tuple_plan(n, p, cK, max_tuples, sub_tuples, seed)
    subsampled = plan is not None
    if subsampled:
        flags.append("contraction maximum over a subsample of (i, m, l); delta1_0 is a lower bound")
    con_k = _ContractionMax(n, sigma, plan)
    con_p = _ContractionMax(n, sigma, plan)

    s2 = sigma**2
    s4 = sigma**4
    pi1 = oracle.pi1_nodes("U")  # (p, n, K)
    pi1v = oracle.pi1_nodes("V") if form == "V" else pi1
    hs = np.stack([oracle.inner_table(j) for j in range(p)])  # (p, n, n, K)

    # accumulators over (i, m), m != i
    k_l4 = k_pm2 = p_l4 = p_pm2 = 0.0
    var_h = l4_h = 0.0
    p11 = p11v = 0.0
    for i in range(n):
        T = oracle.pair_block(i)
        P2 = oracle.pi2_block(i, T)
        mask = np.arange(n) != i
        wi = tw[i]
        wpair = wi[None, :, None] * tw[:, None, :]  # (n, K, K)
        Tm, Pm = T[:, mask], P2[:, mask]
        wp = wpair[mask]
        k_l4 = max(k_l4, float(np.max(np.einsum("jmab,mab->jm", Tm**4, wp) / s4[:, None])))
        p_l4 = max(p_l4, float(np.max(np.einsum("jmab,mab->jm", Pm**4, wp) / s4[:, None])))
        wm = tw[mask]
        pm2 = np.einsum("jmab,mb->jma", Tm**2, wm)
        k_pm2 = max(k_pm2, float(np.max(np.einsum("jma,a->jm", pm2**2, wi) / s4[:, None])))
        ppm2 = np.einsum("jmab,mb->jma", Pm**2, wm)
        p_pm2 = max(p_pm2, float(np.max(np.einsum("jma,a->jm", ppm2**2, wi) / s4[:, None])))
        h = hs[:, i, mask]  # (p, n-1, K): P_m psi(x^i_a, .)
        mean_h = np.einsum("jma,a->jm", h, wi)
        var_h = max(var_h, float(np.max((np.einsum("jma,a->jm", h**2, wi) - mean_h**2) / s2[:, None])))
        l4_h = max(l4_h, float(np.max(np.einsum("jma,a->jm", h**4, wi) / s4[:, None])))
        # pi_1 *_i pi_2 contractions: value at y^m_b, then L^2(P_m)
        for src, store in ((pi1, "p11"), (pi1v, "p11v")):
            if store == "p11v" and form != "V":
                continue
            val = np.einsum("ja,kmab,a->jkmb", src[:, i], Pm, wi)
            nrm = np.einsum("jkmb,mb->jkm", val**2, wm) / np.outer(s2, s2)[:, :, None]
            if store == "p11":
                p11 = max(p11, float(np.max(nrm)))
            else:
                p11v = max(p11v, float(np.max(nrm)))
        con_k.update(i, T[..., :cK, :cK], cw[i], cw)
        con_p.update(i, P2[..., :cK, :cK], cw[i], cw)

    # first-order projection norms at the nodes
    pi1_l2 = np.sqrt(np.max(np.einsum("jia,ia->ji", pi1**2, tw) / s2[:, None]))
    pi1_l4 = float(np.max(np.einsum("jia,ia->ji", pi1**4, tw) / s4[:, None]))
    pi1v_l2 = np.sqrt(np.max(np.einsum("jia,ia->ji", pi1v**2, tw) / s2[:, None]))
    pi1v_l4 = float(np.max(np.einsum("jia,ia->ji", pi1v**4, tw) / s4[:, None]))
    diag_var = diag_l4 = 0.0
    if form == "V":
        idx = np.arange(n)
        dv = np.stack([kernels.diag_eval(j, idx[:, None], tn) for j in range(p)])  # (p, n, K)
        dmean = np.einsum("jia,ia->ji", dv, tw)
        diag_var = float(np.max((np.einsum("jia,ia->ji", dv**2, tw) - dmean**2) / s2[:, None]))
        diag_l4 = float(np.max(np.einsum("jia,ia->ji", dv**4, tw) / s4[:, None]))

    mc = _mc_maxima(kernels, oracle, sigma, q, form, mc_draws, seed)

    lp, lnp = log_floor(p), log_floor(n * p)
    se: dict[str, float] = {}
    # ---- kernel form
    d10 = n**2 * math.sqrt(max(con_k.value, 0.0))
    vmax = math.sqrt(max(var_h, 0.0))
    terms = {
        "d21_1": n**5 * l4_h,
        "d21_2": n ** (4 + 4 / q) * mc["k_h"][0] * lp,
        "d22_1": n**2 * k_l4 * lp**3,
        "d22_2": n**3 * k_pm2 * lp**2,
        "d22_3": n * mc["k_pm4"][0] * lp**4,
        "d22_4": n ** (4 / q) * mc["k_psi"][0] * lnp**5,
        "d22_5": n ** (2 + 4 / q) * mc["k_pm2"][0] * lnp**3,
    }
    se.update(
        d21_2=n ** (4 + 4 / q) * mc["k_h"][1] * lp,
        d22_3=n * mc["k_pm4"][1] * lp**4,
        d22_4=n ** (4 / q) * mc["k_psi"][1] * lnp**5,
        d22_5=n ** (2 + 4 / q) * mc["k_pm2"][1] * lnp**3,
    )
    # ---- projection form
    pd10 = n**2 * math.sqrt(max(con_p.value, 0.0))
    proj = {
        "delta1_0": pd10,
        "delta1_1": n**1.5 * math.sqrt(max(p11 if form == "U" else p11v, 0.0)),
        "d21_1": n * (pi1_l4 if form == "U" else pi1v_l4),
        "d21_2": n ** (4 / q) * mc["p_pi1"][0] * lp,
        "d22_1": n**2 * p_l4 * lp**3,
        "d22_2": n**3 * p_pm2 * lp**2,
        "d22_3": n * mc["p_pm4"][0] * lp**4,
        "d22_4": n ** (4 / q) * mc["p_psi"][0] * lnp**5,
        "d22_5": n ** (2 + 4 / q) * mc["p_pm2"][0] * lnp**3,
    }
    lin_proj = math.sqrt(n) * float(pi1_l2 if form == "U" else pi1v_l2)
    proj["delta1_prime"] = delta1_prime_from(proj["delta1_0"], proj["delta1_1"], lin_proj, proj["d22_5"], p)
    proj["composite_bound"] = composite_from_terms(proj["delta1_prime"], proj, p)

    if form == "U":
        d11 = n**1.5 * vmax * math.sqrt(d10)
        d1p = delta1_prime_from(d10, d11, n**1.5 * vmax, terms["d22_5"], p)
        d10_out = d10
    else:
        d11 = (n**1.5 * vmax + math.sqrt(n) * math.sqrt(max(diag_var, 0.0))) * math.sqrt(d10)
        terms["d21_1"] = n**5 * l4_h + n * diag_l4
        terms["d21_2"] = terms["d21_2"] + n ** (4 / q) * mc["k_diag"][0] * lp
        se["d21_2"] = math.hypot(se["d21_2"], n ** (4 / q) * mc["k_diag"][1] * lp)
        d1p = delta1_prime_from(pd10, d11, lin_proj, proj["d22_5"], p)
        d10_out = pd10
    for name, v in list(terms.items()) + [("delta1_0", d10_out), ("delta1_1", d11)]:
        if not math.isfinite(v):
            flags.append(f"{name} diverged; reported as +inf")
    composite = composite_from_terms(d1p, terms, p)
    if not math.isfinite(composite):
        composite = math.inf
    sub = {
        "tuples_evaluated": int(tuples_used),
        "tuples_total": int(tuples_total),
        "subsampled": bool(subsampled),
        "delta1_0_is_lower_bound": bool(subsampled),
        "mc_draws": int(mc_draws),
        "kernel_form_delta1_0": d10,
    }
    return DeltaReport(
        delta1_0=d10_out,
        delta1_1=d11,
        delta1_prime=d1p,
        delta2_terms=terms,
        composite_bound=composite,
        form=form,
        q=float(q),
        n=n,
        p=p,
        se=se,
        subsampling=sub,
        projection=proj,
        flags=tuple(flags),
    )


def _mc_maxima(kernels, oracle, sigma, q, form, draws, seed) -> dict[str, tuple[float, float]]:
    """Norms of maxima over ``(j, i, m)`` of functions of the random sample."""
    n, p = kernels.n, kernels.p
    tn, tw = oracle.table_nodes, oracle.table_weights
    idx = np.arange(n)
    off = ~np.eye(n, dtype=bool)
    hs = [oracle.inner_table(j) for j in range(p)]
    cs = [oracle.table_double_means(j) for j in range(p)]
    names = ("k_h", "k_pm4", "k_psi", "k_pm2", "k_diag", "p_pi1", "p_pm4", "p_psi", "p_pm2")
    rec = {k: np.zeros(draws) for k in names}
    for r in range(draws):
        x = draw_values(oracle.marginals, stream(seed, r, "delta_mc"))
        cur = {k: 0.0 for k in names}
        for j in range(p):
            s = sigma[j]
            E = np.empty((n, n, tn.shape[1]))
            for i in range(n):
                E[i] = kernels.eval(j, i, idx[:, None], x[i][None, None, :], tn)
            H = np.einsum("imb,mb->im", E, tw)
            E2 = E**2
            pm2 = np.einsum("imb,mb->im", E2, tw)
            pm4 = np.einsum("imb,mb->im", E2**2, tw)
            g = kernels.gram(j, x)
            c = cs[j]
            # pi_2(X_i, x^m_b) = psi - P_i psi(., x^m_b) - P_m psi(X_i, .) + P_i P_m psi
            P2 = E - np.transpose(hs[j], (1, 0, 2)) - H[:, :, None] + c[:, :, None]
            P22 = P2**2
            ppm2 = np.einsum("imb,mb->im", P22, tw)
            ppm4 = np.einsum("imb,mb->im", P22**2, tw)
            pi1 = np.where(off, H - c, 0.0).sum(axis=1)
            if form == "V":
                dg = kernels.diag_eval(j, idx, x)
                dm = np.sum(kernels.diag_eval(j, idx[:, None], tn) * tw, axis=1)
                pi1 = pi1 + 0.5 * (dg - dm)
                cur["k_diag"] = max(cur["k_diag"], float(np.max(np.abs(dg))) / s)
            quad = g - H - H.T + c
            cur["k_h"] = max(cur["k_h"], float(np.max(np.abs(H[off]))) / s)
            cur["k_pm4"] = max(cur["k_pm4"], float(np.max(pm4[off])) / s**4)
            cur["k_psi"] = max(cur["k_psi"], float(np.max(np.abs(g[off]))) / s)
            cur["k_pm2"] = max(cur["k_pm2"], float(np.max(pm2[off])) / s**2)
            cur["p_pi1"] = max(cur["p_pi1"], float(np.max(np.abs(pi1))) / s)
            cur["p_pm4"] = max(cur["p_pm4"], float(np.max(ppm4[off])) / s**4)
            cur["p_psi"] = max(cur["p_psi"], float(np.max(np.abs(quad[off]))) / s)
            cur["p_pm2"] = max(cur["p_pm2"], float(np.max(ppm2[off])) / s**2)
        for k in names:
            rec[k][r] = cur[k]
    out = {}
    for k in ("k_h", "k_psi", "k_diag", "p_pi1", "p_psi"):
        out[k] = _lq(rec[k], q, 4.0)
    for k in ("k_pm2", "p_pm2"):
        out[k] = _lq(rec[k], q / 2.0, 2.0)
    for k in ("k_pm4", "p_pm4"):
        out[k] = _mean_se(rec[k])
    return out
