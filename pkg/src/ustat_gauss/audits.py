"""Numerical audits of maximal and fourth-moment inequalities for U-statistics.

Each audit estimates both sides of an inequality (universal constants set to
1) and reports their ratio.  Left-hand sides are Monte Carlo norms over
replications; right-hand sides combine exact node-table integrals with Monte
Carlo norms of maxima computed from the same replications, so rescaling the
kernels by ``c > 0`` changes both sides by the same power of ``c``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .bounds import _jsonable, log_floor
from .errors import UsageError
from .hoeffding import ProjectionOracle
from .kernels import KernelFamily
from .marginals import MarginalModel, draw_values
from .rng import stream


@dataclass(frozen=True)
class AuditReport:
    inequality_id: str
    lhs: float
    rhs: float
    ratio: float
    n: int
    p: int
    q: float
    r: int
    lhs_se: float = 0.0
    rhs_se: float = 0.0
    terms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class FirstOrderFamily:
    """``p`` order-one kernels ``psi_{j,i}(x)``; ``func(j, i, x)`` broadcasts like a kernel family."""

    n: int
    p: int
    func: Callable
    name: str = "order-1"

    def eval(self, j: int, i, x) -> np.ndarray:
        return np.asarray(self.func(j, np.asarray(i), np.asarray(x, dtype=float)), dtype=float)

    def scaled(self, c: float) -> "FirstOrderFamily":
        f = self.func
        return replace(self, func=lambda j, i, x: c * f(j, i, x), name=f"{c:g}*{self.name}")


# ------------------------------------------------------------------ builders
def audit_marginals(n: int, seed: int = 0) -> tuple[MarginalModel, ...]:
    """Heteroscedastic normal / uniform laws used by the audit grids."""
    from .marginals import Normal, Uniform

    out = []
    for i in range(n):
        s = 0.5 + (i % 7) / 6.0
        mu = 0.3 * math.cos(i + 1.0)
        comp = Normal.of(mu, s) if i % 2 == 0 else Uniform.of(mu - s * math.sqrt(3.0), mu + s * math.sqrt(3.0))
        out.append(MarginalModel(i, (comp,)))
    return tuple(out)


def degenerate_first_order(marginals: Sequence[MarginalModel], p: int, seed: int = 0) -> FirstOrderFamily:
    """``psi_{j,i}(x) = b_{j,i} (x - mu_i)`` with fixed random loadings."""
    n = len(marginals)
    mu = np.array([m.components[0].mean for m in marginals])
    b = 0.5 + stream(seed, 0, "audit_design", 1).random((p, n))

    def func(j, i, x):
        return b[j][i] * (x[..., 0] - mu[i])

    return FirstOrderFamily(n, p, func, "centred-linear")


def nonneg_first_order(marginals: Sequence[MarginalModel], p: int, seed: int = 0) -> FirstOrderFamily:
    n = len(marginals)
    mu = np.array([m.components[0].mean for m in marginals])
    b = 0.5 + stream(seed, 0, "audit_design", 1).random((p, n))

    def func(j, i, x):
        return b[j][i] * (x[..., 0] - mu[i]) ** 2

    return FirstOrderFamily(n, p, func, "squared-linear")


def degenerate_second_order(marginals: Sequence[MarginalModel], p: int, seed: int = 0) -> KernelFamily:
    """``psi_{j,(i,m)} = w_j(i,m) (x - mu_i)(y - mu_m)`` with symmetric random weights."""
    n = len(marginals)
    mu = np.array([m.components[0].mean for m in marginals])
    rng = stream(seed, 0, "audit_design", 2)
    w = rng.uniform(0.5, 1.5, size=(p, n, n))
    w = (w + np.swapaxes(w, 1, 2)) / 2.0

    def func(j, i, m, x, y):
        return w[j][i, m] * (x[..., 0] - mu[i]) * (y[..., 0] - mu[m])

    return KernelFamily(n=n, p=p, func=func, degenerate=(True,) * p, degree=1, name="product-degenerate")


def nonneg_second_order(marginals: Sequence[MarginalModel], p: int, seed: int = 0) -> KernelFamily:
    n = len(marginals)
    mu = np.array([m.components[0].mean for m in marginals])
    rng = stream(seed, 0, "audit_design", 2)
    w = rng.uniform(0.5, 1.5, size=(p, n, n))
    w = (w + np.swapaxes(w, 1, 2)) / 2.0

    def func(j, i, m, x, y):
        return w[j][i, m] * (x[..., 0] - mu[i]) ** 2 * (y[..., 0] - mu[m]) ** 2

    return KernelFamily(n=n, p=p, func=func, degree=2, name="product-nonneg")


# ------------------------------------------------------------------- helpers
def _lq(y: np.ndarray, q: float) -> tuple[float, float]:
    """``||Y||_{L^q}`` and a delta-method standard error."""
    y = np.asarray(y, dtype=float)
    if math.isinf(q):
        return float(np.max(y)), 0.0
    mom = y**q
    m = float(np.mean(mom))
    if m <= 0:
        return 0.0, 0.0
    se_m = float(np.std(mom, ddof=1) / math.sqrt(len(y)))
    return m ** (1.0 / q), (1.0 / q) * m ** (1.0 / q - 1.0) * se_m


def _draws(marginals, reps: int, seed: int) -> np.ndarray:
    return np.stack([draw_values(marginals, stream(seed, r, "audit")) for r in range(reps)])


def _first_order_nodes(marginals, n_nodes: int = 12):
    rules = [m.quadrature(n_nodes) for m in marginals]
    return rules


# --------------------------------------------------------- maximal inequality
def audit_max_inequality(
    kernels: KernelFamily | FirstOrderFamily,
    marginals: Sequence[MarginalModel],
    q: float = 2.0,
    reps: int = 2000,
    seed: int = 0,
    variant: str = "degenerate",
    check_tol: float = 1e-9,
) -> AuditReport:
    """Moment bound for ``max_j |J_r(psi_j)|`` with ``r`` in ``{1, 2}``.

    ``variant="degenerate"`` audits the bound for degenerate kernels (square
    root of integrated squares); ``variant="nonneg"`` audits the bound for
    nonnegative kernels.
    """
    if q < 1:
        raise UsageError("q must be >= 1")
    if reps < 2:
        raise UsageError("need at least two replications")
    if variant not in ("degenerate", "nonneg"):
        raise UsageError(f"unknown audit variant {variant!r}")
    marginals = tuple(marginals)
    n, p = kernels.n, kernels.p
    r = 1 if isinstance(kernels, FirstOrderFamily) else 2
    x = _draws(marginals, reps, seed)  # (R, n, d)
    L = q + math.log(p)
    qn = max(1.0, q / 2.0)

    if r == 1:
        rules = _first_order_nodes(marginals)
        nodes = np.stack([rl[0] for rl in rules])
        wts = np.stack([rl[1] for rl in rules])
        idx = np.arange(n)
        at_nodes = np.stack([kernels.eval(j, idx[:, None], nodes) for j in range(p)])  # (p, n, K)
        means = np.einsum("jia,ia->ji", at_nodes, wts)
        vals = np.stack([kernels.eval(j, idx[None, :], x) for j in range(p)])  # (p, R, n)
        if variant == "degenerate":
            if np.max(np.abs(means)) > check_tol * max(1.0, float(np.max(np.abs(at_nodes)))):
                raise UsageError("kernel is not degenerate (nonzero mean); use the nonneg variant or centre it")
            stat = np.max(np.abs(vals.sum(axis=2)), axis=0)
            e2 = float(np.max(np.einsum("jia,ia->ji", at_nodes**2, wts)))
            terms = {"s0": math.sqrt(n) * math.sqrt(L) * math.sqrt(e2)}
            m1 = np.max(vals**2, axis=(0, 2))
            v, se1 = _lq(m1, qn)
            terms["s1"] = L * math.sqrt(v)
            ses = {"s0": 0.0, "s1": L * 0.5 * se1 / math.sqrt(v) if v > 0 else 0.0}
        else:
            _check_nonneg(at_nodes, vals)
            stat = np.max(vals.sum(axis=2), axis=0)
            terms = {"s0": n * float(np.max(means))}
            v, se1 = _lq(np.max(vals, axis=(0, 2)), q)
            terms["s1"] = L * v
            ses = {"s0": 0.0, "s1": L * se1}
    else:
        oracle = ProjectionOracle(kernels, marginals)
        tn, tw = oracle.table_nodes, oracle.table_weights
        if variant == "degenerate":
            for j in range(p):
                if not oracle.is_degenerate(j, check_tol):
                    raise UsageError(f"kernel {j} is not degenerate; its first-order projection is nonzero")
        idx = np.arange(n)
        sq_mean = 0.0  # max E psi^2 (or E psi) over (j, i, m)
        for i in range(n):
            T = oracle.pair_block(i)
            wp = tw[i][None, :, None] * tw[:, None, :]
            f = T**2 if variant == "degenerate" else T
            if variant == "nonneg":
                _check_nonneg(T)
            e = np.einsum("jmab,mab->jm", f, wp)
            e[:, i] = -np.inf
            sq_mean = max(sq_mean, float(np.max(e)))
        stat = np.empty(reps)
        m_s1 = np.empty(reps)
        m_s2 = np.empty(reps)
        off = ~np.eye(n, dtype=bool)
        for rr in range(reps):
            xs = x[rr]
            best_stat = best1 = best2 = -np.inf
            for j in range(p):
                g = kernels.gram(j, xs)
                J = float(np.sum(np.triu(g, 1)))
                E = np.stack([kernels.eval(j, i, idx[:, None], xs[i][None, None, :], tn) for i in range(n)])  # (n, n, K)
                if variant == "degenerate":
                    best_stat = max(best_stat, abs(J))
                    pk = np.einsum("imb,mb->im", E**2, tw)
                    best2 = max(best2, float(np.max(g[off] ** 2)))
                else:
                    _check_nonneg(g)
                    best_stat = max(best_stat, J)
                    pk = np.einsum("imb,mb->im", E, tw)
                    best2 = max(best2, float(np.max(g[off])))
                best1 = max(best1, float(np.max(pk[off])))
            stat[rr], m_s1[rr], m_s2[rr] = best_stat, best1, best2
        if variant == "degenerate":
            v1, se1 = _lq(m_s1, qn)
            v2, se2 = _lq(m_s2, qn)
            terms = {
                "s0": n * L * math.sqrt(sq_mean),
                "s1": math.sqrt(n) * L**1.5 * math.sqrt(v1),
                "s2": L**2 * math.sqrt(v2),
            }
            ses = {
                "s0": 0.0,
                "s1": math.sqrt(n) * L**1.5 * (0.5 * se1 / math.sqrt(v1) if v1 > 0 else 0.0),
                "s2": L**2 * (0.5 * se2 / math.sqrt(v2) if v2 > 0 else 0.0),
            }
        else:
            v1, se1 = _lq(m_s1, q)
            v2, se2 = _lq(m_s2, q)
            terms = {"s0": n**2 * sq_mean, "s1": n * L * v1, "s2": L**2 * v2}
            ses = {"s0": 0.0, "s1": n * L * se1, "s2": L**2 * se2}

    lhs, lhs_se = _lq(stat, q)
    top = max(terms, key=terms.get)
    rhs, rhs_se = terms[top], ses[top]
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    ident = "max-U" if variant == "degenerate" else "max-nonneg"
    return AuditReport(ident, lhs, rhs, ratio, n, p, float(q), r, lhs_se, rhs_se, terms)


def _check_nonneg(*arrays) -> None:
    for a in arrays:
        if np.any(np.asarray(a) < 0):
            raise UsageError("nonneg audit variant needs nonnegative kernels")


# --------------------------------------------------------- fourth moments
def audit_rosenthal(
    kernels: KernelFamily,
    marginals: Sequence[MarginalModel],
    reps: int = 2000,
    seed: int = 0,
    variant: str = "upper",
    check_tol: float = 1e-9,
) -> AuditReport:
    """Fourth-moment bounds for partial sums of a degenerate order-2 kernel.

    ``variant`` selects the one-sided influence moment over ``m > i``
    (``"upper"``) or ``m < i`` (``"lower"``), or the summed version over all
    ``i`` (``"sum"``).
    """
    if variant not in ("upper", "lower", "sum"):
        raise UsageError(f"unknown variant {variant!r}")
    if reps < 2:
        raise UsageError("need at least two replications")
    marginals = tuple(marginals)
    n, p = kernels.n, kernels.p
    oracle = ProjectionOracle(kernels, marginals)
    for j in range(p):
        if not oracle.is_degenerate(j, check_tol):
            raise UsageError(f"kernel {j} is not degenerate; its first-order projection is nonzero")
    tn, tw = oracle.table_nodes, oracle.table_weights
    lp, lnp = log_floor(p), log_floor(n * p)

    # deterministic pieces over (i, m), m != i
    pm2_l2 = l4 = 0.0
    for i in range(n):
        T = oracle.pair_block(i)
        mask = np.arange(n) != i
        wp = tw[i][None, :, None] * tw[:, None, :]
        l4 = max(l4, float(np.max(np.einsum("jmab,mab->jm", T[:, mask] ** 4, wp[mask]))))
        pm2 = np.einsum("jmab,mb->jma", T[:, mask] ** 2, tw[mask])
        pm2_l2 = max(pm2_l2, float(np.max(np.einsum("jma,a->jm", pm2**2, tw[i]))))

    x = _draws(marginals, reps, seed)
    idx = np.arange(n)
    off = ~np.eye(n, dtype=bool)
    lhs_i = np.zeros((reps, n))  # per-i inner quantity for one-sided variants
    lhs_sum = np.zeros(reps)
    e_pi4 = np.zeros(reps)
    e_pm2sq = np.zeros(reps)
    e_psi4 = np.zeros(reps)
    upper = np.triu(np.ones((n, n), dtype=bool), 1)  # [i, m]: m > i
    side = upper if variant == "upper" else upper.T
    for rr in range(reps):
        xs = x[rr]
        best_i = np.full(n, -np.inf)
        best_sum = best_pi4 = best_pm2 = best_psi4 = -np.inf
        for j in range(p):
            # A[i, a, m] = psi(x^i_a, X_m)
            A = np.stack([kernels.eval(j, i, idx[None, :], tn[i][:, None, :], xs[None, :, :]) for i in range(n)])
            partial = np.einsum("iam,im->ia", A, side.astype(float))
            best_i = np.maximum(best_i, np.einsum("ia,ia->i", partial**4, tw))
            # P_i psi^4 (X_m) for i != m
            pi4 = np.einsum("iam,ia->im", A**4, tw)
            best_pi4 = max(best_pi4, float(np.max(pi4[off])))
            g = kernels.gram(j, xs)
            best_sum = max(best_sum, float(np.sum(np.sum(g, axis=1) ** 4)))
            # P_m psi^2 (X_i) = sum_b w^m_b psi(X_i, x^m_b)^2
            B = np.stack([kernels.eval(j, i, idx[:, None], xs[i][None, None, :], tn) for i in range(n)])
            pm2s = np.einsum("imb,mb->im", B**2, tw)
            best_pm2 = max(best_pm2, float(np.max(pm2s[off] ** 2)))
            best_psi4 = max(best_psi4, float(np.max(g[off] ** 4)))
        lhs_i[rr] = best_i
        lhs_sum[rr] = best_sum
        e_pi4[rr], e_pm2sq[rr], e_psi4[rr] = best_pi4, best_pm2, best_psi4

    def mean_se(v):
        return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v)))

    pi4, pi4_se = mean_se(e_pi4)
    if variant in ("upper", "lower"):
        per_i = lhs_i.mean(axis=0)
        k = int(np.argmax(per_i))
        lhs = float(per_i[k])
        lhs_se = float(np.std(lhs_i[:, k], ddof=1) / math.sqrt(reps))
        terms = {
            "pm2_l2": n**2 * pm2_l2 * lp**2,
            "l4": n * l4 * lp**3,
            "max_pi4": pi4 * lp**4,
        }
        rhs_se = pi4_se * lp**4
        ident = "rosenthal-" + variant
    else:
        lhs, lhs_se = mean_se(lhs_sum)
        pm2sq, pm2sq_se = mean_se(e_pm2sq)
        psi4, psi4_se = mean_se(e_psi4)
        terms = {
            "pm2_l2": n**3 * pm2_l2 * lp**2,
            "l4": n**2 * l4 * lp**3,
            "max_pi4": n * pi4 * lp**4,
            "max_pm2_sq": n**2 * pm2sq * lnp**3,
            "max_psi4": psi4 * lnp**5,
        }
        rhs_se = math.sqrt((n * pi4_se * lp**4) ** 2 + (n**2 * pm2sq_se * lnp**3) ** 2 + (psi4_se * lnp**5) ** 2)
        ident = "rosenthal-sum"
    rhs = float(sum(terms.values()))
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return AuditReport(ident, lhs, rhs, ratio, n, p, 4.0, 2, lhs_se, rhs_se, terms)
