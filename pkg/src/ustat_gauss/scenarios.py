"""Built-in experiment scenarios: marginals, kernel family and design per config.

Designs (instrument matrices, basis points, polynomial coefficients) are
fixed given ``(seed, n)`` and drawn from a dedicated ``design`` stream, so they
do not change across replications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import ConfigurationError
from .hoeffding import ProjectionOracle
from .kernels import KernelFamily, WeightMatrix, make_mmd_family, make_polynomial, make_two_sample_family, make_weighted
from .marginals import IndexedSample, MarginalModel, ScenarioConfig, sample, scenario_marginals
from .rng import stream

REGIMES = ("case-i", "case-ii", "case-iii")


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    marginals: tuple[MarginalModel, ...]
    kernels: KernelFamily
    form: str = "U"
    design: dict[str, Any] = field(default_factory=dict)

    def sample(self, rep_id: int) -> IndexedSample:
        return sample(self.config, rep_id, self.marginals)

    def oracle(self, mode: str = "exact", **kw) -> ProjectionOracle:
        kw.setdefault("budget", int(self.config.quadrature_budget))
        kw.setdefault("seed", int(self.config.seed))
        return ProjectionOracle(self.kernels, self.marginals, mode=mode, **kw)


# ------------------------------------------------------------------ weak IV
def weak_iv_sizes(n: int, regime: str, params: dict | None = None) -> tuple[int, float]:
    """Number of instruments ``K`` and concentration ``mu^2`` for a regime.

    case-i: fixed ``K`` and ``mu^2 = n``; case-ii: ``K ~ n^{2/3}`` and
    ``mu^2 = K``; case-iii: ``K ~ n^{2/3}`` and ``mu^2 = sqrt(K)``.
    """
    params = params or {}
    if regime not in REGIMES:
        raise ConfigurationError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if regime == "case-i":
        K = int(params.get("K", 2))
        mu2 = float(params.get("mu2", n))
    else:
        K = int(params.get("K", math.ceil(n ** (2.0 / 3.0))))
        mu2 = float(params.get("mu2", K if regime == "case-ii" else math.sqrt(K)))
    if not 1 <= K < n:
        raise ConfigurationError(f"need 1 <= K < n, got K={K}, n={n}")
    if mu2 <= 0:
        raise ConfigurationError("mu^2 must be positive")
    return K, mu2


def hat_matrix(z: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(z)
    return q @ q.T


def weak_iv_design(n: int, p: int, regime: str, seed: int, params: dict | None = None) -> dict:
    params = params or {}
    K, mu2 = weak_iv_sizes(n, regime, params)
    zs, pis, hats = [], [], []
    for j in range(p):
        rng = stream(seed, 0, "design", j)
        z = rng.standard_normal((n, K))
        pi = np.ones(K) / math.sqrt(K)
        zs.append(z)
        pis.append(pi)
        hats.append(hat_matrix(z))
    return {"K": K, "mu2": mu2, "Z": zs, "pi": pis, "P": hats, "rho": float(params.get("rho", 0.5))}


def weak_iv_kernels(n: int, design: dict) -> KernelFamily:
    """``psi_{j,(i,m)} = (a_ij u_i + a_mj u_m)/(n-1) + P_im,j (eps_i u_m + eps_m u_i)/mu^2``.

    An observation is ``(xi, eta)`` with ``eps = xi`` and
    ``u = rho xi + sqrt(1 - rho^2) eta``; its pair sum is the numerator of the
    JIVE2 error.
    """
    rho = design["rho"]
    mu2 = design["mu2"]
    mu = math.sqrt(mu2)
    r2 = math.sqrt(1.0 - rho * rho)
    avecs, offs = [], []
    for z, pi, P in zip(design["Z"], design["pi"], design["P"]):
        avecs.append((1.0 - np.diag(P)) * (z @ pi) / (mu * math.sqrt(n)) / (n - 1))
        off = P.copy()
        np.fill_diagonal(off, 0.0)
        offs.append(off / mu2)

    def func(j, i, m, x, y):
        ex, ux = x[..., 0], rho * x[..., 0] + r2 * x[..., 1]
        ey, uy = y[..., 0], rho * y[..., 0] + r2 * y[..., 1]
        a = avecs[j]
        return a[i] * ux + a[m] * uy + offs[j][i, m] * (ex * uy + ey * ux)

    return KernelFamily(n=n, p=len(avecs), func=func, degree=1, name="weak-iv")


# ---------------------------------------------------------------------- PLM
def legendre_basis(z: np.ndarray, K: int) -> np.ndarray:
    return np.polynomial.legendre.legvander(2.0 * np.asarray(z) - 1.0, K - 1)


def plm_design(n: int, p: int, seed: int, params: dict | None = None) -> dict:
    params = params or {}
    K = int(params.get("K", max(2, round(float(params.get("k_ratio", 0.1)) * n))))
    if not 1 <= K < n:
        raise ConfigurationError(f"need 1 <= K < n, got K={K}, n={n}")
    zs, Ms = [], []
    for j in range(p):
        z = np.sort(stream(seed, 0, "design", j).random(n))
        B = legendre_basis(z, K)
        Ms.append(np.eye(n) - hat_matrix(B))
        zs.append(z)
    return {"K": K, "z": zs, "M": Ms}


def plm_kernels(n: int, design: dict) -> KernelFamily:
    """V-form kernel ``M_im (v_i eps_m + v_m eps_i) / (2 sqrt n)`` with diagonal ``M_ii v eps / sqrt n``."""
    s = 2.0 * math.sqrt(n)
    ws = []
    for M in design["M"]:
        ws.append(WeightMatrix(M / s, 2.0 * np.diag(M) / s))

    def phi(x, y):
        return x[..., 0] * y[..., 1] + y[..., 0] * x[..., 1]

    fam = make_weighted(ws, phi, p=len(ws), degree=1, name="plm")
    # the weighted diagonal is w_ii * phi(x, x) = 2 w_ii v eps, so halve it
    f = fam.diag_func
    return replace(fam, diag_func=lambda j, i, x: 0.5 * f(j, i, x))


# ------------------------------------------------------------ product kernel
def product_design(p: int, seed: int, params: dict | None = None) -> dict:
    params = params or {}
    D = int(params.get("degree", 2))
    if not 1 <= D <= 3:
        raise ConfigurationError("product kernel degree must be in {1, 2, 3}")
    rng = stream(seed, 0, "design", 0)
    c = rng.standard_normal((p, D + 1, D + 1))
    c = (c + np.swapaxes(c, 1, 2)) / 2.0
    return {"coefs": c, "degree": D}


# ----------------------------------------------------- separately exchangeable
DEFAULT_SEP_COEF = {"a": 0.5, "c": 0.5, "ac": 1.0, "e": 1.0}


def sep_coef(params: dict) -> dict:
    coef = dict(DEFAULT_SEP_COEF)
    coef.update(params.get("coef", {}))
    return {k: float(v) for k, v in coef.items()}


def sep_exchangeable_kernels(n: int, m: int, p: int, coef: dict) -> KernelFamily:
    """Cross-block kernel ``E[D | alpha, gamma] / (2 n m)``; its V-statistic is ``II``."""
    la, lc, lac = coef["a"], coef["c"], coef["ac"]
    specs = []
    for j in range(p):

        def f3(a, g, j=j):
            return (la * a[..., j] + lc * g[..., j] + lac * a[..., j] * g[..., j]) / (2.0 * n * m)

        zero = _zero_phi
        specs.append((0.0, 0.0, 1.0, zero, zero, f3))
    fam = make_two_sample_family(n, m, specs, degree=1, name="sep-exchangeable")

    def diag(j, i, x):
        return np.zeros(np.broadcast_shapes(np.shape(i), x.shape[:-1]))

    return replace(fam, diag_func=diag)


def _zero_phi(x, y):
    return np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))


# ------------------------------------------------------------------ builder
def build_scenario(config: ScenarioConfig) -> Scenario:
    kind, n, p, prm = config.scenario_kind, int(config.n), int(config.p), dict(config.params)
    margs = scenario_marginals(config)
    kernel_kind = prm.get("kernel", {}).get("kind") if isinstance(prm.get("kernel"), dict) else prm.get("kernel")
    if kind == "product-kernel":
        design = product_design(p, config.seed, prm)
        if kernel_kind in (None, "product_poly"):
            w = WeightMatrix(np.full((n, n), 1.0 / n), np.full(n, 1.0 / n))
            kern = make_polynomial(design["coefs"], w=w)
        elif kernel_kind == "weighted":
            rng = stream(config.seed, 0, "design", 1)
            a = rng.standard_normal((n, n)) / n
            w = WeightMatrix((a + a.T) / 2.0, np.diag(a).copy())
            coefs = np.zeros((p, 2, 2))
            coefs[:, 1, 1] = 1.0
            coefs[:, 0, 1] = coefs[:, 1, 0] = np.linspace(0.2, 1.0, p)
            kern = make_polynomial(coefs, w=w, name="weighted")
            design = {"w": w.w, "coefs": coefs}
        else:
            raise ConfigurationError(f"kernel kind {kernel_kind!r} not available for product-kernel scenarios")
        return Scenario(config, margs, kern, prm.get("form", "U"), design)
    if kind == "weak-iv":
        design = weak_iv_design(n, p, prm.get("regime", "case-iii"), config.seed, prm)
        return Scenario(config, margs, weak_iv_kernels(n, design), "U", design)
    if kind == "plm":
        design = plm_design(n, p, config.seed, prm)
        return Scenario(config, margs, plm_kernels(n, design), "V", design)
    if kind == "two-sample":
        m = int(prm.get("m", n))
        d = int(prm.get("d", 1))
        if kernel_kind in (None, "gaussian_mmd"):
            hs = prm.get("bandwidths") or list(np.geomspace(0.25, 4.0, p))
            if len(hs) != p:
                raise ConfigurationError(f"{len(hs)} bandwidths for p={p}")
            kern = make_mmd_family(n, m, hs, d)
            design = {"bandwidths": [float(h) for h in hs]}
        elif kernel_kind == "two_sample":
            specs = []
            for j in range(p):
                t = 0.5 + j / max(p - 1, 1)

                def f(x, y, t=t):
                    return t * np.sum(x * y, axis=-1) + np.sum(x + y, axis=-1)

                specs.append((1.0 / (n * (n - 1)), 1.0 / (m * (m - 1)), -1.0 / (n * m), f, f, f))
            kern = make_two_sample_family(n, m, specs, degree=1, name="two_sample")
            design = {}
        else:
            raise ConfigurationError(f"kernel kind {kernel_kind!r} not available for two-sample scenarios")
        return Scenario(config, margs, kern, "U", design)
    if kind == "sep-exchangeable":
        m = int(prm.get("m", n))
        coef = sep_coef(prm)
        return Scenario(config, margs, sep_exchangeable_kernels(n, m, p, coef), "V", {"coef": coef, "m": m})
    raise ConfigurationError(f"unsupported scenario kind {kind!r}")
