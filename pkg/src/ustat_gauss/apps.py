"""Applications: adaptive MMD test, JIVE2, partially linear model, gluing pipeline."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .bounds import _jsonable
from .errors import DomainError, SingularityError, UsageError
from .gauss import glue_bounds, rectangle_distance, sample_gaussian
from .kernels import make_gaussian_smoother, mmd_weights
from .rng import stream

COND_LIMIT = 1e12


# ----------------------------------------------------------------- MMD test
@dataclass(frozen=True)
class MmdTestResult:
    statistics: np.ndarray  # J2 per bandwidth
    studentized: np.ndarray
    perm_sd: np.ndarray
    perm_quantiles: np.ndarray  # per-bandwidth (1 - alpha) quantile of studentized permutation stats
    bandwidth_grid: np.ndarray
    max_statistic: float
    critical_value: float
    p_value: float
    permutations: int
    alpha: float
    decision: str

    @property
    def reject(self) -> bool:
        return self.decision == "reject"

    def csv_rows(self) -> list[dict]:
        return [
            {"h": float(h), "stat": float(s), "studentized": float(t), "perm_quantile": float(q)}
            for h, s, t, q in zip(self.bandwidth_grid, self.statistics, self.studentized, self.perm_quantiles)
        ]

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def default_bandwidth_grid(n: int, d: int = 1, size: int = 10) -> np.ndarray:
    """Geometric grid spanning the rate-optimal bandwidths ``n^{-2/(4a+d)}`` for smoothness ``a`` in ``[0.25, 2]``.

    The two ends are widened by factors 1/4 and 4.
    """
    lo = 0.25 * n ** (-2.0 / (4 * 0.25 + d))
    hi = 4.0 * n ** (-2.0 / (4 * 2.0 + d))
    return np.geomspace(lo, hi, size)


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def mmd_adaptive_test(
    xs,
    ys,
    grid: Sequence[float] | None = None,
    B: int = 499,
    alpha: float = 0.05,
    seed: int = 0,
    rep_id: int = 0,
) -> MmdTestResult:
    """Permutation test of ``P = Q`` using the max over bandwidths of studentized MMD U-statistics.

    Each bandwidth's statistic is divided by its standard deviation over the
    observed labelling and the ``B`` label permutations; the studentized
    maximum is compared with its permutation distribution.
    """
    x, y = _as_2d(xs), _as_2d(ys)
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise UsageError("both samples need at least 2 observations")
    if x.shape[1] != y.shape[1]:
        raise UsageError("samples must have the same dimension")
    if B < 199:
        raise UsageError("need at least B = 199 permutations")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    d = x.shape[1]
    hs = default_bandwidth_grid(min(n, m), d) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if hs.size == 0:
        raise UsageError("bandwidth grid is empty")
    if np.any(~np.isfinite(hs)) or np.any(hs <= 0):
        raise DomainError("bandwidths must be finite and > 0")

    z = np.concatenate([x, y])
    N = n + m
    rng = stream(seed, rep_id, "mmd_permutation")
    labels = np.zeros((N, B + 1))
    labels[:n, 0] = 1.0
    perms = np.argsort(rng.random((B, N)), axis=1)[:, :n]
    labels[perms, np.arange(1, B + 1)[:, None]] = 1.0

    c1, c2, c3 = mmd_weights(n, m)
    sq = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=-1)
    stats = np.empty((len(hs), B + 1))
    for k, h in enumerate(hs):
        make_gaussian_smoother(h, d)  # validates h
        g = np.exp(-0.5 * sq / (h * h)) / ((2.0 * math.pi) ** (d / 2.0) * h**d)
        np.fill_diagonal(g, 0.0)
        row = g.sum(axis=1)
        tot = float(row.sum())
        s_xx = np.einsum("ib,ib->b", labels, g @ labels)
        s_x = labels.T @ row
        s_xy = s_x - s_xx
        s_yy = tot - 2.0 * s_x + s_xx
        stats[k] = 0.5 * (c1 * s_xx + c2 * s_yy + 2.0 * c3 * s_xy)
    sd = stats.std(axis=1, ddof=1)
    safe = np.where(sd > 0, sd, 1.0)
    stud = np.where(sd[:, None] > 0, stats / safe[:, None], 0.0)
    tmax = stud.max(axis=0)
    obs = float(tmax[0])
    perm_max = tmax[1:]
    p_value = (1.0 + float(np.sum(perm_max >= obs))) / (B + 1.0)
    crit = float(np.quantile(perm_max, 1.0 - alpha, method="higher"))
    perm_q = np.quantile(stud[:, 1:], 1.0 - alpha, axis=1, method="higher")
    return MmdTestResult(
        statistics=stats[:, 0].copy(),
        studentized=stud[:, 0].copy(),
        perm_sd=sd,
        perm_quantiles=perm_q,
        bandwidth_grid=hs,
        max_statistic=obs,
        critical_value=crit,
        p_value=p_value,
        permutations=B,
        alpha=alpha,
        decision="reject" if p_value <= alpha else "accept",
    )


# ------------------------------------------------------------- estimators
@dataclass(frozen=True)
class EstimatorResult:
    estimate: np.ndarray
    components: dict = field(default_factory=dict)
    regime_tag: str | None = None
    condition_number: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def csv_rows(self) -> list[dict]:
        rows = [{"coef": k, "component": "estimate", "value": float(v)} for k, v in enumerate(self.estimate)]
        for name, vec in self.components.items():
            for k, v in enumerate(np.atleast_1d(vec)):
                rows.append({"coef": k, "component": name, "value": float(v)})
        return rows

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _solve(a: np.ndarray, b: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Solve ``a x = b`` through a column-pivoted QR with a condition-number gate."""
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularityError(f"{what} matrix has condition number {cond:.3g} > {COND_LIMIT:.0e}")
    q, r, piv = linalg.qr(a, pivoting=True)
    sol = np.empty_like(b, dtype=float)
    sol[piv] = linalg.solve_triangular(r, q.T @ b)
    return sol, cond


def projection_matrix(basis: np.ndarray, name: str = "instrument") -> np.ndarray:
    """Orthogonal projection onto the column space of a full-rank ``basis``."""
    basis = np.asarray(basis, dtype=float)
    q, r, _ = linalg.qr(basis, mode="economic", pivoting=True)
    k = basis.shape[1]
    dr = np.abs(np.diag(r))
    if k == 0 or dr.size < k or dr[-1] <= 1e-12 * max(dr[0], 1e-300):
        raise SingularityError(f"{name} matrix is rank deficient (need rank {k})")
    cond = float(np.linalg.cond(basis))
    if cond > COND_LIMIT:
        raise SingularityError(f"{name} matrix has condition number {cond:.3g} > {COND_LIMIT:.0e}")
    return q @ q.T


def classify_regime(linear_var: float, quadratic_var: float) -> str:
    """Tag by the quadratic share of the error variance: below 1/3 case-i, above 2/3 case-iii."""
    tot = linear_var + quadratic_var
    share = quadratic_var / tot if tot > 0 else 0.0
    if share < 1.0 / 3.0:
        return "case-i"
    if share > 2.0 / 3.0:
        return "case-iii"
    return "case-ii"


def jive2(y, x, z, theta=None, pi=None, regime: str | None = None) -> EstimatorResult:
    """JIVE2 ``(sum_{i!=m} X_i P_im X_m')^{-1} sum_{i!=m} X_i P_im Y_m``.

    With the true ``theta`` the components split the estimation error into
    the linear term ``sum_m (1 - P_mm)(Z pi)_m u_m`` and the quadratic term
    ``sum_{i!=m} P_im eps_i u_m``, each premultiplied by the inverse outer
    matrix, where ``u = y - x theta`` and ``eps = x - Z pi``.  Without ``pi``
    the first-stage least-squares fit is used; the split is exact for any
    ``pi``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    x = _as_2d(x)
    z = _as_2d(z)
    n, K = z.shape
    if len(y) != n or len(x) != n:
        raise UsageError("y, x and z need the same number of rows")
    if not n > K:
        raise UsageError(f"need n > K, got n={n}, K={K}")
    P = projection_matrix(z, "instrument")
    P0 = P - np.diag(np.diag(P))
    a = x.T @ P0 @ x
    b = x.T @ P0 @ y
    est, cond = _solve(a, b, "JIVE2 outer")
    if pi is None:
        pi = linalg.lstsq(z, x)[0]
    pi = np.asarray(pi, dtype=float).reshape(K, -1)
    fit = z @ pi
    eps = x - fit
    comps: dict = {}
    theta_used = est if theta is None else np.asarray(theta, dtype=float).reshape(-1)
    u = y - x @ theta_used
    lin = ((1.0 - np.diag(P))[:, None] * fit).T @ u
    quad = eps.T @ P0 @ u
    if theta is not None:
        comps["linear_term"] = _solve(a, lin, "JIVE2 outer")[0]
        comps["quadratic_term"] = _solve(a, quad, "JIVE2 outer")[0]
        comps["bias_terms"] = np.zeros_like(est)
    su2 = float(np.mean(u * u))
    se2 = float(np.mean(eps[:, 0] ** 2))
    lin_var = su2 * float(np.sum(((1.0 - np.diag(P)) * fit[:, 0]) ** 2))
    quad_var = su2 * se2 * float(np.sum(P0 * P0))
    tag = regime or classify_regime(lin_var, quad_var)
    diag = {"K": K, "linear_var": lin_var, "quadratic_var": quad_var}
    return EstimatorResult(est, comps, tag, cond, diag)


def legendre_design(z, K: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    lo, hi = float(z.min()), float(z.max())
    t = 2.0 * (z - lo) / (hi - lo) - 1.0 if hi > lo else np.zeros_like(z)
    return np.polynomial.legendre.legvander(t, K - 1)


def bspline_design(z, K: int, degree: int = 3) -> np.ndarray:
    """Cubic B-spline basis with ``K`` functions and interior knots at quantiles of ``z``."""
    z = np.asarray(z, dtype=float)
    if K < degree + 1:
        raise UsageError(f"a degree-{degree} spline basis needs K >= {degree + 1}")
    lo, hi = float(z.min()), float(z.max())
    inner = np.quantile(z, np.linspace(0, 1, K - degree + 1)[1:-1])
    t = np.concatenate([[lo] * (degree + 1), inner, [hi] * (degree + 1)])
    return BSpline.design_matrix(z, t, degree).toarray()


def series_basis(z, K: int, basis: str = "legendre") -> np.ndarray:
    if basis == "legendre":
        return legendre_design(z, K)
    if basis == "bspline":
        return bspline_design(z, K)
    raise UsageError(f"unknown basis {basis!r}; expected 'legendre' or 'bspline'")


def plm(y, x, z, K: int, basis: str = "legendre", beta=None, g=None, h=None) -> EstimatorResult:
    """Series estimator ``(X' M X)^{-1} X' M Y`` with ``M = I - P_K (P_K' P_K)^{-1} P_K'``.

    With the true ``beta``, ``g(z)`` values and ``h(z) = E[X | z]`` values the
    components split ``sqrt(n) (beta_hat - beta)`` into
    ``Psi_n = n^{-1/2} sum_i M_ii v_i eps_i``, the off-diagonal quadratic form
    ``U_n``, ``B_n = n^{-1/2} h' M g`` and ``R_n = n^{-1/2} (h' M eps + v' M g)``,
    each premultiplied by ``(X' M X / n)^{-1}``.  The bias terms are reported,
    never subtracted.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    x = _as_2d(x)
    n = len(y)
    if len(x) != n or len(np.asarray(z)) != n:
        raise UsageError("y, x and z need the same number of rows")
    if not 1 <= K < n:
        raise UsageError(f"need 1 <= K < n, got K={K}")
    PK = series_basis(z, K, basis)
    P = projection_matrix(PK, f"{basis} basis (K={K})")
    M = np.eye(n) - P
    a = x.T @ M @ x
    est, cond = _solve(a, x.T @ M @ y, "PLM outer")
    comps: dict = {}
    if beta is not None and g is not None and h is not None:
        beta = np.asarray(beta, dtype=float).reshape(-1)
        gv = np.asarray(g, dtype=float).reshape(-1)
        hv = _as_2d(h)
        eps = y - x @ beta - gv
        v = x - hv
        rn = math.sqrt(n)
        dm = np.diag(M)
        M0 = M - np.diag(dm)
        parts = {
            "linear_term": (v * dm[:, None]).T @ eps / rn,
            "quadratic_term": v.T @ M0 @ eps / rn,
            "bias_B": hv.T @ M @ gv / rn,
            "bias_R": (hv.T @ M @ eps + v.T @ M @ gv) / rn,
        }
        for k, val in parts.items():
            comps[k] = _solve(a / n, val, "PLM outer")[0]
    diag = {"K": K, "basis": basis, "M_idempotence": float(np.max(np.abs(M @ M - M))), "M_annihilates_basis": float(np.max(np.abs(M @ PK)))}
    return EstimatorResult(est, comps, None, cond, diag)


# ------------------------------------------------- separately exchangeable
@dataclass(frozen=True)
class GluingReport:
    total: float
    delta1: float
    delta2: float
    delta3: float
    glued: float
    combined_se: float
    holds: bool
    component_I: float
    component_II: float
    ses: dict = field(default_factory=dict)
    n: int = 0
    m: int = 0
    p: int = 0
    reps: int = 0

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _sep_parts(values: np.ndarray, noise: np.ndarray, n: int, coef: dict) -> tuple[np.ndarray, np.ndarray]:
    """``I`` and ``II`` of the array mean ``(nm)^{-1} sum_{i,t} D_it``."""
    a_bar = values[:n].mean(axis=0)
    g_bar = values[n:].mean(axis=0)
    part2 = coef["a"] * a_bar + coef["c"] * g_bar + coef["ac"] * a_bar * g_bar
    part1 = coef["e"] * noise.mean(axis=(0, 1))
    return part1, part2


def sep_exchangeable_pipeline(
    n: int = 50,
    m: int = 50,
    p: int = 4,
    coef: dict | None = None,
    reps: int = 2000,
    seed: int = 0,
    f_draws: int = 20,
    gaussian_draws: int = 20000,
    latent: str = "normal",
) -> GluingReport:
    """Check the gluing inequality for ``D_it = a alpha_i + c gamma_t + ac alpha_i gamma_t + e eps_it``.

    The array mean splits into ``I`` (conditionally centred given the latent
    variables) and ``II`` (a two-sample V-statistic of ``E[D | alpha, gamma]``).
    ``delta1`` averages the conditional distance of ``I`` over ``f_draws``
    latent draws, ``delta2`` compares the conditional and unconditional
    Gaussian laws of ``I`` and ``delta3`` is the distance of ``II`` plus an
    independent Gaussian.  The total distance of ``I + II`` must not exceed
    their sum by more than four combined standard errors.
    """
    from .marginals import ScenarioConfig, draw_values, sample
    from .scenarios import build_scenario

    params = {"m": m, "latent": latent}
    if coef is not None:
        params["coef"] = dict(coef)
    cfg = ScenarioConfig("sep-exchangeable", n, p, seed=seed, replications=reps, params=params)
    sc = build_scenario(cfg)
    cf = sc.design["coef"]
    sig_ii = sc.oracle().covariance("V")
    noise_var = 1.0
    sig_i = cf["e"] ** 2 * noise_var / (n * m) * np.eye(p)

    def draw(rep: int, purpose: str = "sep_noise", index: int = -1):
        vals = sample(cfg, rep, sc.marginals).values
        eps = stream(seed, rep, purpose, index).standard_normal((n, m, p))
        return vals, eps

    I = np.empty((reps, p))
    II = np.empty((reps, p))
    for r in range(reps):
        vals, eps = draw(r)
        I[r], II[r] = _sep_parts(vals, eps, n, cf)
    theta = I + II
    mean = theta.mean(axis=0)
    se = theta.std(axis=0, ddof=1) / math.sqrt(reps)
    if np.any(np.abs(mean) > 4.0 * np.where(se > 0, se, np.inf)):
        raise UsageError("the array entries do not have mean zero")

    def dist(w, cov, rid):
        zs = sample_gaussian(cov, gaussian_draws, seed=seed, rep_id=rid)
        return rectangle_distance(w, zs, seed=seed)

    total = dist(theta, sig_i + sig_ii, 1)
    comp_i = dist(I, sig_i, 2)
    comp_ii = dist(II, sig_ii, 3)

    # conditional law of I given the latent variables: average over latent draws
    d1, d1_se = [], []
    for f in range(f_draws):
        vals = draw_values(sc.marginals, stream(seed, f, "sep_latent"))
        cond = np.empty((reps, p))
        for r in range(reps):
            eps = stream(seed, r, "sep_conditional", f).standard_normal((n, m, p))
            cond[r] = _sep_parts(vals, eps, n, cf)[0]
        est = dist(cond, sig_i, 100 + f)
        d1.append(est.value)
        d1_se.append(est.se)
    delta1 = float(np.mean(d1))
    delta1_se = float(np.mean(d1_se)) / math.sqrt(f_draws)
    # homoscedastic noise: the conditional covariance of I equals its unconditional one
    delta2 = 0.0
    shifted = II + sample_gaussian(sig_i, reps, seed=seed, rep_id=4)
    d3 = dist(shifted, sig_i + sig_ii, 5)
    glued = glue_bounds(delta1, delta2, d3.value)
    comb = math.sqrt(total.se**2 + delta1_se**2 + d3.se**2)
    return GluingReport(
        total=total.value,
        delta1=delta1,
        delta2=delta2,
        delta3=d3.value,
        glued=glued,
        combined_se=comb,
        holds=bool(total.value <= glued + 4.0 * comb),
        component_I=comp_i.value,
        component_II=comp_ii.value,
        ses={"total": total.se, "delta1": delta1_se, "delta3": d3.se, "component_I": comp_i.se, "component_II": comp_ii.se},
        n=n,
        m=m,
        p=p,
        reps=reps,
    )
