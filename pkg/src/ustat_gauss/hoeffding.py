"""Hoeffding projections of index-dependent second-order kernels.

Every integral against ``P_i`` is a weighted sum over a node set attached to
index ``i``.  In ``exact`` mode the nodes are a tensor Gauss rule chosen from
the kernel's polynomial degree, so all integrals of polynomial kernels (and of
their products up to fourth powers) are exact.  In ``mc`` mode the nodes are
``budget`` independent draws with equal weights; the same draws are reused for
every ``x`` (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError, UsageError
from .kernels import KernelFamily
from .marginals import IndexedSample, MarginalModel
from .rng import stream

SMOOTH_NODES = 40
MC_NODE_CAP = 256


def nodes_for_degree(degree: int | None) -> int:
    """Gauss points per coordinate exact for integrands of degree ``4 * degree``."""
    if degree is None:
        return SMOOTH_NODES
    return max(1, math.ceil((4 * degree + 1) / 2))


def _pad(rules: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    K = max(len(w) for _, w in rules)
    d = rules[0][0].shape[1]
    nodes = np.empty((len(rules), K, d))
    weights = np.zeros((len(rules), K))
    for i, (x, w) in enumerate(rules):
        nodes[i, : len(w)] = x
        nodes[i, len(w) :] = x[0]
        weights[i, : len(w)] = w
    return nodes, weights


@dataclass(frozen=True)
class ReconstructionResult:
    linear_part: float
    quadratic_part: float
    residual: float
    residual_se: float = 0.0
    form: str = "U"


class ProjectionOracle:
    """Evaluates ``pi_1``, ``pi_2``, ``pi_1^V`` and one-index contractions.

    Indices are 0-based.  The tables ``P_m psi(x_a, .)`` at the nodes of index
    ``i`` and ``P_i P_m psi`` are built lazily and cached per kernel.
    """

    def __init__(
        self,
        kernels: KernelFamily,
        marginals: Sequence[MarginalModel],
        mode: str = "exact",
        budget: int = 20000,
        nodes_per_dim: int | None = None,
        seed: int = 0,
    ):
        if len(marginals) != kernels.n:
            raise ConfigurationError(f"{len(marginals)} marginals for a family over n={kernels.n}")
        if mode not in ("exact", "mc"):
            raise ConfigurationError(f"unknown oracle mode {mode!r}")
        if mode == "mc" and budget < 100:
            raise ConfigurationError("mc mode needs a budget of at least 100 draws")
        self.kernels = kernels
        self.marginals = tuple(marginals)
        self.mode = mode
        self.budget = int(budget)
        self.seed = int(seed)
        self.n, self.p = kernels.n, kernels.p
        if mode == "exact":
            npd = nodes_per_dim or nodes_for_degree(kernels.degree)
            self.nodes, self.weights = _pad([m.quadrature(npd) for m in marginals])
            self.table_nodes, self.table_weights = self.nodes, self.weights
        else:
            draws = np.stack([m.draw(stream(seed, 0, "oracle", m.index), self.budget) for m in marginals])
            self.nodes = draws
            self.weights = np.full((self.n, self.budget), 1.0 / self.budget)
            cap = min(self.budget, MC_NODE_CAP)
            self.table_nodes = draws[:, :cap]
            self.table_weights = np.full((self.n, cap), 1.0 / cap)
        self.dim = self.nodes.shape[2]
        self._h: dict[int, np.ndarray] = {}
        self._c: dict[int, np.ndarray] = {}
        self._dmean: dict[int, float] = {}

    # ------------------------------------------------------------------ basics
    @property
    def exact(self) -> bool:
        return self.mode == "exact"

    @property
    def table_subsampled(self) -> bool:
        return self.table_nodes.shape[1] < self.nodes.shape[1]

    def p_inner(self, j: int, i, m, x, return_se: bool = False):
        """``P_m psi_{j,(i,m)}(x, .)``; ``x`` has shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        m = np.asarray(m)
        i = np.asarray(i)
        ys = self.nodes[m]  # (..., K, d)
        ws = self.weights[m]
        vals = self.kernels.eval(j, i[..., None], m[..., None], x[..., None, :], ys)
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"non-finite kernel values while integrating kernel {j}")
        mean = np.sum(vals * ws, axis=-1)
        if not return_se:
            return mean
        if self.exact:
            return mean, np.zeros_like(mean)
        sd = np.sqrt(np.maximum(np.sum(vals**2 * ws, axis=-1) - mean**2, 0.0))
        return mean, sd / math.sqrt(self.budget - 1)

    def double_means(self, j: int) -> np.ndarray:
        """Matrix ``c[i, m] = P_i P_m psi_{j,(i,m)}`` (zero diagonal)."""
        if j not in self._c:
            if self.exact:
                self._tables(j)
            else:
                # paired draws of independent streams are an unbiased product-measure estimate
                self._c[j] = _paired_means(self.kernels, j, self.nodes)
        return self._c[j]

    def diag_mean(self, j: int) -> np.ndarray:
        """Vector ``P_i psi_{j,(i,i)}``."""
        if j not in self._dmean:
            idx = np.arange(self.n)
            vals = self.kernels.diag_eval(j, idx[:, None], self.nodes)
            self._dmean[j] = np.sum(vals * self.weights, axis=-1)
        return self._dmean[j]

    # ------------------------------------------------------------- projections
    def pi1(self, j: int, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c = self.double_means(j)[i]
        others = np.array([m for m in range(self.n) if m != i])
        h = self.p_inner(j, i, others, x[..., None, :])  # (..., n-1)
        return np.sum(h - c[others], axis=-1)

    def pi2(self, j: int, i: int, m: int, x, y) -> np.ndarray:
        if i == m:
            raise UsageError("pi2 needs i != m; the diagonal only enters through V-statistics")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (
            self.kernels.eval(j, i, m, x, y)
            - self.p_inner(j, m, i, y)
            - self.p_inner(j, i, m, x)
            + self.double_means(j)[i, m]
        )

    def pi1_v(self, j: int, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.pi1(j, i, x) + 0.5 * (self.kernels.diag_eval(j, i, x) - self.diag_mean(j)[i])

    def contract(self, j: int, k: int, i: int, m: int, l: int, y_m, y_l, projected: bool = False) -> np.ndarray:
        """``int psi_{j,(i,m)}(x, y_m) psi_{k,(i,l)}(x, y_l) dP_i(x)``.

        With ``projected=True`` both kernels are replaced by their ``pi_2``
        projections.
        """
        if m == i or l == i:
            raise UsageError("contraction needs m != i and l != i")
        xs = self.nodes[i]
        w = self.weights[i]
        y_m = np.asarray(y_m, dtype=float)[..., None, :]
        y_l = np.asarray(y_l, dtype=float)[..., None, :]
        if projected:
            a = self.pi2(j, i, m, xs, y_m)
            b = self.pi2(k, i, l, xs, y_l)
        else:
            a = self.kernels.eval(j, i, m, xs, y_m)
            b = self.kernels.eval(k, i, l, xs, y_l)
        return np.sum(a * b * w, axis=-1)

    # ------------------------------------------------------- sample-level parts
    def inner_at_sample(self, j: int, values: np.ndarray) -> np.ndarray:
        """``H[i, m] = P_m psi_{j,(i,m)}(X_i, .)`` for all pairs (zero diagonal)."""
        v = np.asarray(values, dtype=float)
        idx = np.arange(self.n)
        H = np.empty((self.n, self.n))
        for i in range(self.n):
            vals = self.kernels.eval(j, i, idx[:, None], v[i][None, None, :], self.nodes)
            H[i] = np.sum(vals * self.weights, axis=-1)
        np.fill_diagonal(H, 0.0)
        return H

    def parts(self, j: int, values: np.ndarray, form: str = "U") -> tuple[np.ndarray, np.ndarray]:
        """Linear terms ``pi_1,i(X_i)`` (length n) and ``pi_2,im(X_i, X_m)`` (n x n).

        With ``form="V"`` the linear terms are ``pi^V_1,i``.
        """
        v = np.asarray(values, dtype=float)
        H = self.inner_at_sample(j, v)
        c = self.double_means(j)
        lin = np.sum(H - c, axis=1)
        if form == "V":
            idx = np.arange(self.n)
            lin = lin + 0.5 * (self.kernels.diag_eval(j, idx, v) - self.diag_mean(j))
        quad = self.kernels.gram(j, v) - H - H.T + c
        np.fill_diagonal(quad, 0.0)
        return lin, quad

    def mean_j2(self, j: int) -> float:
        return float(np.sum(np.triu(self.double_means(j), 1)))

    def mean_j2_v(self, j: int) -> float:
        return 2.0 * self.mean_j2(j) + float(np.sum(self.diag_mean(j)))

    # --------------------------------------------------------- node-level tables
    def pair_block(self, i: int, js: Sequence[int] | None = None) -> np.ndarray:
        """``T[j, m, a, b] = psi_{j,(i,m)}(x^i_a, x^m_b)`` on the table nodes."""
        js = range(self.p) if js is None else js
        xs, ns = self.table_nodes[i], self.table_nodes
        idx = np.arange(self.n)
        out = np.stack([self.kernels.eval(j, i, idx[:, None, None], xs[None, :, None, :], ns[:, None, :, :]) for j in js])
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite kernel values in the node table of index {i}")
        return out

    def _tables(self, j: int) -> None:
        n = self.n
        K = self.table_nodes.shape[1]
        h = np.zeros((n, n, K))
        c = np.zeros((n, n))
        tw = self.table_weights
        for i in range(n):
            T = self.pair_block(i, [j])[0]
            h[i] = np.einsum("mab,mb->ma", T, tw)
            h[i, i] = 0.0
            c[i] = h[i] @ tw[i]
        self._h[j] = h
        if self.exact:
            self._c[j] = c

    def inner_table(self, j: int) -> np.ndarray:
        """``h[i, m, a] = P_m psi_{j,(i,m)}(x^i_a, .)`` on the table nodes."""
        if j not in self._h:
            self._tables(j)
        return self._h[j]

    def table_double_means(self, j: int) -> np.ndarray:
        h = self.inner_table(j)
        if self.exact:
            return self._c[j]
        return np.einsum("ima,ia->im", h, self.table_weights)

    def pi1_nodes(self, form: str = "U") -> np.ndarray:
        """``pi_1,i`` (or ``pi^V_1,i``) at the table nodes of ``i``: shape ``(p, n, K)``."""
        out = []
        idx = np.arange(self.n)
        for j in range(self.p):
            h = self.inner_table(j)
            c = self.table_double_means(j)
            val = np.sum(h - c[:, :, None], axis=1)
            if form == "V":
                dv = self.kernels.diag_eval(j, idx[:, None], self.table_nodes)
                dv = dv - np.sum(dv * self.table_weights, axis=1, keepdims=True)
                val = val + 0.5 * dv
            out.append(val)
        return np.stack(out)

    def pi2_block(self, i: int, T: np.ndarray | None = None) -> np.ndarray:
        """``pi_2,im`` at node pairs for all ``j, m``: shape ``(p, n, K, K)`` (m = i zeroed)."""
        if T is None:
            T = self.pair_block(i)
        hs = np.stack([self.inner_table(j) for j in range(self.p)])  # (p, n, n, K)
        cs = np.stack([self.table_double_means(j) for j in range(self.p)])
        P2 = T - hs[:, i, :, :, None] - hs[:, :, i, None, :] + cs[:, i, :, None, None]
        P2[:, i] = 0.0
        return P2

    def is_degenerate(self, j: int, tol: float = 1e-10) -> bool:
        h = self.inner_table(j)
        scale = max(1.0, float(np.max(np.abs(self.pair_block(0, [j])))))
        return bool(np.max(np.abs(h)) <= tol * scale)

    # ---------------------------------------------------------------- variance
    def covariance(self, form: str = "U") -> np.ndarray:
        """Exact ``Cov(W)`` from the Hoeffding formula (table nodes).

        For ``form="V"`` this is the covariance of ``J2^V``, i.e. four times the
        projection sum (the full double sum counts every pair twice).
        """
        n, p = self.n, self.p
        tw = self.table_weights
        pi1 = self.pi1_nodes(form)
        cov = np.einsum("jia,kia,ia->jk", pi1, pi1, tw)
        for i in range(n - 1):
            P2 = self.pi2_block(i)[:, i + 1 :]
            wgt = tw[i][None, :, None] * tw[i + 1 :][:, None, :]
            cov += np.einsum("jmab,kmab,mab->jk", P2, P2, wgt)
        cov = (cov + cov.T) / 2.0
        return 4.0 * cov if form == "V" else cov


def reconstruct(oracle: ProjectionOracle, sample: IndexedSample, j: int, form: str = "U", batches: int = 20) -> ReconstructionResult:
    """Check ``J2 - E J2 = sum pi_1 + sum_{i<m} pi_2`` on one sample.

    The V-form uses ``J2^V - E J2^V = 2 (sum pi^V_1 + sum_{i<m} pi_2)``.  In mc
    mode the residual is returned with a batch-means standard error.
    """
    k = oracle.kernels
    v = sample.values
    lin, quad = oracle.parts(j, v, form)
    quad_sum = float(np.sum(np.triu(quad, 1)))
    gram_sum = float(np.sum(np.triu(k.gram(j, v), 1)))
    if form == "U":
        centred = gram_sum - oracle.mean_j2(j)
        lin_part, quad_part = float(np.sum(lin)), quad_sum
    elif form == "V":
        idx = np.arange(k.n)
        jv = 2.0 * gram_sum + float(np.sum(k.diag_eval(j, idx, v)))
        centred = jv - oracle.mean_j2_v(j)
        lin_part, quad_part = 2.0 * float(np.sum(lin)), 2.0 * quad_sum
    else:
        raise UsageError(f"unknown form {form!r}")
    residual = centred - lin_part - quad_part
    se = 0.0
    if not oracle.exact:
        size = oracle.budget // batches
        res = []
        for b in range(batches):
            sub = _sub_oracle(oracle, slice(b * size, (b + 1) * size))
            res.append(reconstruct(sub, sample, j, form).residual)
        se = float(np.std(res, ddof=1) / math.sqrt(batches))
    return ReconstructionResult(lin_part, quad_part, residual, se, form)


def _sub_oracle(oracle: ProjectionOracle, sl: slice) -> ProjectionOracle:
    sub = object.__new__(ProjectionOracle)
    sub.__dict__.update(oracle.__dict__)
    sub.nodes = oracle.nodes[:, sl]
    sub.budget = sub.nodes.shape[1]
    sub.weights = np.full((oracle.n, sub.budget), 1.0 / sub.budget)
    sub.mode = "exact"  # residual of a fixed node set is exact for that set
    sub._h, sub._c, sub._dmean = {}, {}, {}
    for j in range(oracle.p):
        sub._c[j] = _paired_means(oracle.kernels, j, sub.nodes)
    return sub


def _paired_means(k: KernelFamily, j: int, nodes: np.ndarray) -> np.ndarray:
    n = nodes.shape[0]
    idx = np.arange(n)
    c = np.empty((n, n))
    for i in range(n):
        c[i] = k.eval(j, i, idx[:, None], nodes[i][None], nodes).mean(axis=-1)
    np.fill_diagonal(c, 0.0)
    return c
