"""Statistic vectors ``J2``, ``J2^V``, the centred vector ``W`` and the
exchangeable-pair objects used by Stein's method."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegeneracyError, NumericalError, UsageError
from .hoeffding import ProjectionOracle
from .kernels import KernelFamily
from .marginals import IndexedSample, MarginalModel, draw_values
from .rng import stream


def _values(sample) -> np.ndarray:
    v = sample.values if isinstance(sample, IndexedSample) else np.asarray(sample, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def _checked_gram(kernels: KernelFamily, j: int, v: np.ndarray) -> np.ndarray:
    g = kernels.gram(j, v)
    if not np.all(np.isfinite(g)):
        i, m = np.argwhere(~np.isfinite(g))[0]
        raise NumericalError(f"non-finite kernel value at (j, i, m) = ({j}, {i}, {m})")
    return g


def j2(sample, kernels: KernelFamily, j: int) -> float:
    """Sum of ``psi_{j,(i,m)}(X_i, X_m)`` over ``i < m`` (row-major pair order)."""
    v = _values(sample)
    if v.shape[0] < 2:
        raise UsageError("J2 needs at least two observations")
    g = _checked_gram(kernels, j, v)
    return float(np.sum(np.triu(g, 1)))


def j2_v(sample, kernels: KernelFamily, j: int) -> float:
    """Full double sum including the diagonal kernel: ``2 J2 + sum_i psi_(i,i)``."""
    v = _values(sample)
    d = kernels.diag_eval(j, np.arange(v.shape[0]), v)
    if not np.all(np.isfinite(d)):
        raise NumericalError(f"non-finite diagonal kernel value at (j, i) = ({j}, {int(np.argmax(~np.isfinite(d)))})")
    return 2.0 * j2(v, kernels, j) + float(np.sum(d))


def statistic_vector(sample, kernels: KernelFamily, form: str = "U") -> np.ndarray:
    f = j2 if form == "U" else j2_v
    return np.array([f(sample, kernels, j) for j in range(kernels.p)])


def j_r(sample, func: Callable, r: int, j: int = 0) -> float:
    """Order-``r`` U-statistic ``sum_{i_1 < ... < i_r} psi(X_{i_1}, ..., X_{i_r})``.

    ``func(j, i_1, .., i_r, x_1, .., x_r)`` must broadcast over index arrays and
    points of shape ``(..., d)``.  Only ``r <= 3`` is supported.
    """
    v = _values(sample)
    n = v.shape[0]
    if r < 1 or r > 3:
        raise UsageError("only orders r in {1, 2, 3} are supported")
    if r > n:
        raise UsageError(f"order {r} exceeds sample size {n}")
    idx = np.arange(n)
    if r == 1:
        vals = func(j, idx, v)
    elif r == 2:
        a, b = np.triu_indices(n, 1)
        vals = func(j, a, b, v[a], v[b])
    else:
        vals = []
        for i in range(n - 2):
            a, b = np.triu_indices(n - i - 1, 1)
            a, b = a + i + 1, b + i + 1
            vals.append(np.sum(func(j, i, a, b, v[i], v[a], v[b])))
        vals = np.array(vals)
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericalError(f"non-finite order-{r} kernel value for kernel {j}")
    return float(np.sum(vals))


@dataclass(frozen=True)
class StatVector:
    """Centred statistic ``w`` with standard deviations ``sigma``.

    Both the raw vector and its studentized version ``w / sigma`` are exposed;
    rectangle distances are computed on the studentized scale.
    """

    w: np.ndarray
    sigma: np.ndarray
    form: str = "U"
    mean: np.ndarray | None = None

    @property
    def studentized(self) -> np.ndarray:
        return self.w / self.sigma

    @property
    def p(self) -> int:
        return len(self.w)


def hoeffding_sigma(oracle: ProjectionOracle, form: str = "U", allow_degenerate: bool = False) -> np.ndarray:
    cov = oracle.covariance(form)
    return checked_sigma(np.diag(cov), allow_degenerate)


def checked_sigma(var: np.ndarray, allow_degenerate: bool = False) -> np.ndarray:
    var = np.asarray(var, dtype=float)
    scale = float(np.max(np.abs(var))) if var.size else 0.0
    bad = np.flatnonzero(var <= 1e-14 * scale) if scale > 0 else np.arange(var.size)
    if bad.size and not allow_degenerate:
        raise DegeneracyError(f"statistic {int(bad[0])} has zero variance; every coordinate needs sigma_j > 0")
    return np.sqrt(np.maximum(var, 0.0))


def compute_w(
    sample,
    kernels: KernelFamily,
    oracle: ProjectionOracle,
    form: str = "U",
    sigma: np.ndarray | None = None,
    allow_degenerate: bool = False,
) -> StatVector:
    """``W = J2 - E J2`` (or the V-form) with ``E J2`` from the oracle.

    ``sigma`` defaults to the Hoeffding variance formula; pass replication
    standard deviations to override it.
    """
    if form not in ("U", "V"):
        raise UsageError(f"unknown form {form!r}")
    stat = statistic_vector(sample, kernels, form)
    mean_f = oracle.mean_j2 if form == "U" else oracle.mean_j2_v
    mean = np.array([mean_f(j) for j in range(kernels.p)])
    if sigma is None:
        sigma = hoeffding_sigma(oracle, form, allow_degenerate)
    else:
        sigma = checked_sigma(np.asarray(sigma, dtype=float) ** 2, allow_degenerate)
    return StatVector(stat - mean, sigma, form, mean)


# ---------------------------------------------------------------- exchangeable pair
@dataclass(frozen=True)
class ExchangeablePairDraw:
    """``X`` and ``X'`` differ only at ``alpha``, where ``X'_alpha = x_star``."""

    x: IndexedSample
    alpha: int
    x_star: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    g: np.ndarray

    @property
    def x_prime(self) -> IndexedSample:
        return self.x.replace_row(self.alpha, self.x_star)


class _PairContext:
    """Per-sample tables needed for many exchangeable-pair draws from one ``X``."""

    def __init__(self, values: np.ndarray, kernels: KernelFamily, oracle: ProjectionOracle):
        self.v = values
        self.k = kernels
        self.o = oracle
        self.n, self.p = kernels.n, kernels.p
        self.H = np.stack([oracle.inner_at_sample(j, values) for j in range(self.p)])  # (p, n, n)
        self.G = np.stack([_checked_gram(kernels, j, values) for j in range(self.p)])
        self.c = np.stack([oracle.double_means(j) for j in range(self.p)])

    def w(self) -> np.ndarray:
        return np.sum(np.triu(self.G, 1), axis=(1, 2)) - np.sum(np.triu(self.c, 1), axis=(1, 2))

    def terms(self, alpha: np.ndarray, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``D1`` and ``D2`` for a batch of ``(alpha, x_star)``; shapes ``(p, B)``."""
        n = self.n
        idx = np.arange(n)
        mask = alpha[:, None] != idx[None, :]  # (B, n)
        d1 = np.empty((self.p, len(alpha)))
        d2 = np.empty((self.p, len(alpha)))
        for j in range(self.p):
            hstar = self.o.p_inner(j, alpha[:, None], idx[None, :], x_star[:, None, :])  # (B, n)
            kstar = self.k.eval(j, alpha[:, None], idx[None, :], x_star[:, None, :], self.v[None, :, :])
            h_old = self.H[j][alpha]
            k_old = self.G[j][alpha]
            lin = np.where(mask, hstar - h_old, 0.0).sum(axis=1)
            # pi2(x*, X_m) - pi2(X_a, X_m): the P_alpha and P_alpha P_m terms cancel
            quad = np.where(mask, (kstar - k_old) - (hstar - h_old), 0.0).sum(axis=1)
            d1[j] = lin
            d2[j] = quad
        return d1, d2


def _draw_star(marginals: Sequence[MarginalModel], alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return draw_values([marginals[a] for a in alpha], rng)


def sample_exchangeable_pair(
    sample: IndexedSample, kernels: KernelFamily, oracle: ProjectionOracle, seed: int = 0, rep_id: int = 0
) -> ExchangeablePairDraw:
    """Resample one uniformly chosen coordinate and form ``D1, D2, G``."""
    rng = stream(seed, rep_id, "exchangeable_pair")
    n = kernels.n
    alpha = int(rng.integers(0, n))
    x_star = _draw_star(sample.marginals, np.array([alpha]), rng)[0]
    ctx = _PairContext(sample.values, kernels, oracle)
    d1, d2 = ctx.terms(np.array([alpha]), x_star[None, :])
    d1, d2 = d1[:, 0], d2[:, 0]
    return ExchangeablePairDraw(sample, alpha, x_star, d1, d2, n * d1 + (n / 2.0) * d2)


def pair_terms(
    sample: IndexedSample, kernels: KernelFamily, oracle: ProjectionOracle, alpha: int, x_star: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic ``(D1, D2, G)`` for a given ``(alpha, x_star)``."""
    ctx = _PairContext(sample.values, kernels, oracle)
    d1, d2 = ctx.terms(np.array([alpha]), np.asarray(x_star, dtype=float).reshape(1, -1))
    n = kernels.n
    return d1[:, 0], d2[:, 0], n * d1[:, 0] + (n / 2.0) * d2[:, 0]


@dataclass(frozen=True)
class DriftReport:
    deviation: np.ndarray  # |mean G + W| per coordinate
    se: np.ndarray
    draws: int

    @property
    def max_z(self) -> float:
        z = np.where(self.se > 0, self.deviation / np.where(self.se > 0, self.se, 1.0), np.where(self.deviation > 0, np.inf, 0.0))
        return float(np.max(z))


def verify_drift(
    sample: IndexedSample,
    kernels: KernelFamily,
    oracle: ProjectionOracle,
    draws: int = 100_000,
    seed: int = 0,
    batch: int = 5000,
) -> DriftReport:
    """Monte Carlo check of ``E[G | X] = -W`` for a fixed sample."""
    if draws < 1000:
        raise UsageError("verify_drift needs at least 1000 draws")
    ctx = _PairContext(sample.values, kernels, oracle)
    n, p = kernels.n, kernels.p
    s1 = np.zeros(p)
    s2 = np.zeros(p)
    done = 0
    b = 0
    while done < draws:
        size = min(batch, draws - done)
        rng = stream(seed, b, "drift")
        alpha = rng.integers(0, n, size=size)
        x_star = _draw_star(sample.marginals, alpha, rng)
        d1, d2 = ctx.terms(alpha, x_star)
        g = n * d1 + (n / 2.0) * d2
        s1 += g.sum(axis=1)
        s2 += (g**2).sum(axis=1)
        done += size
        b += 1
    mean = s1 / draws
    var = np.maximum(s2 / draws - mean**2, 0.0) * draws / (draws - 1)
    return DriftReport(np.abs(mean + ctx.w()), np.sqrt(var / draws), draws)


@dataclass(frozen=True)
class SecondMomentReport:
    diff: np.ndarray  # mean of (G_j D_k / 2 - W_j W_k), p x p
    se: np.ndarray
    lhs: np.ndarray  # mean of W_j W_k
    rhs: np.ndarray  # mean of G_j D_k / 2
    reps: int

    @property
    def max_z(self) -> float:
        se = np.where(self.se > 0, self.se, np.inf)
        z = np.abs(self.diff) / se
        z = np.where((self.se == 0) & (self.diff != 0), np.inf, z)
        return float(np.max(z))


def verify_second_moment_identity(
    marginals: Sequence[MarginalModel],
    kernels: KernelFamily,
    oracle: ProjectionOracle,
    reps: int = 10_000,
    seed: int = 0,
) -> SecondMomentReport:
    """Unconditional check of ``E[W_j W_k] = E[G_j D_k] / 2`` with fresh ``(X, alpha, X*)``.

    The standard error is that of the paired difference, which is much
    smaller than the SEs of the two sides taken separately.
    """
    if reps < 1000:
        raise UsageError("verify_second_moment_identity needs at least 1000 reps")
    n, p = kernels.n, kernels.p
    marginals = tuple(marginals)
    s_lhs = np.zeros((p, p))
    s_rhs = np.zeros((p, p))
    s_d = np.zeros((p, p))
    s_d2 = np.zeros((p, p))
    for r in range(reps):
        rng = stream(seed, r, "second_moment")
        values = draw_values(marginals, rng)
        ctx = _PairContext(values, kernels, oracle)
        alpha = np.array([int(rng.integers(0, n))])
        x_star = _draw_star(marginals, alpha, rng)
        d1, d2 = ctx.terms(alpha, x_star)
        g = (n * d1 + (n / 2.0) * d2)[:, 0]
        d = (d1 + d2)[:, 0]
        w = ctx.w()
        ww = np.outer(w, w)
        gd = 0.5 * np.outer(g, d)
        s_lhs += ww
        s_rhs += gd
        s_d += gd - ww
        s_d2 += (gd - ww) ** 2
    mean = s_d / reps
    var = np.maximum(s_d2 / reps - mean**2, 0.0) * reps / (reps - 1)
    return SecondMomentReport(mean, np.sqrt(var / reps), s_lhs / reps, s_rhs / reps, reps)


def linear_quadratic_parts(sample, oracle: ProjectionOracle, form: str = "U") -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate ``sum pi_1`` and ``sum_{i<m} pi_2``, each of length ``p``."""
    v = _values(sample)
    lin = np.empty(oracle.p)
    quad = np.empty(oracle.p)
    for j in range(oracle.p):
        l, q = oracle.parts(j, v, form)
        lin[j] = np.sum(l)
        quad[j] = np.sum(np.triu(q, 1))
    return lin, quad


def replication_sigma(sampler: Callable[[int], IndexedSample], kernels: KernelFamily, reps: int, form: str = "U") -> np.ndarray:
    """Sample standard deviation of the statistic across ``reps`` replications."""
    if reps < 2:
        raise UsageError("need at least two replications")
    stats = np.stack([statistic_vector(sampler(r), kernels, form) for r in range(reps)])
    return np.std(stats, axis=0, ddof=1)


def orthogonality_check(sampler: Callable[[int], IndexedSample], oracle: ProjectionOracle, reps: int, form: str = "U") -> tuple[np.ndarray, np.ndarray]:
    """Empirical covariance of ``sum pi_1`` and ``sum pi_2`` per coordinate with SEs."""
    lin = np.empty((reps, oracle.p))
    quad = np.empty((reps, oracle.p))
    for r in range(reps):
        lin[r], quad[r] = linear_quadratic_parts(sampler(r), oracle, form)
    prod = (lin - lin.mean(axis=0)) * (quad - quad.mean(axis=0))
    return prod.mean(axis=0), prod.std(axis=0, ddof=1) / math.sqrt(reps)
