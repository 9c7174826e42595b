"""Per-index marginal laws, samples and scenario configuration.

Every observation ``X_i`` is a vector whose coordinates are independent scalar
draws.  A scalar law is an affine image ``loc + scale * Y`` of a standard shape
``Y`` (normal, uniform on [0, 1], Bernoulli, or a normal mixture), which keeps
exact raw moments, Gauss quadrature rules and vectorized sampling in one place.

The distribution catalog used by the built-in scenarios is a modelling choice,
not something imposed by the theory: any i.n.i.d. family would do.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from numpy.polynomial import hermite_e, legendre
from scipy.special import comb, ndtri

from .errors import ConfigurationError, NumericalError
from .rng import stream

MOMENT_ORDER = 8
SCENARIO_KINDS = ("product-kernel", "weak-iv", "plm", "two-sample", "sep-exchangeable")


def _std_normal_moments(order: int) -> np.ndarray:
    out = np.zeros(order + 1)
    out[0] = 1.0
    for k in range(2, order + 1, 2):
        out[k] = out[k - 2] * (k - 1)
    return out


def _normal_moments(mean: float, sd: float, order: int) -> np.ndarray:
    z = _std_normal_moments(order)
    out = np.empty(order + 1)
    for k in range(order + 1):
        i = np.arange(k + 1)
        out[k] = np.sum(comb(k, i) * mean ** (k - i) * sd**i * z[i])
    return out


def _affine_moments(base: np.ndarray, loc: float, scale: float) -> np.ndarray:
    order = len(base) - 1
    out = np.empty(order + 1)
    for k in range(order + 1):
        i = np.arange(k + 1)
        out[k] = np.sum(comb(k, i) * loc ** (k - i) * scale**i * base[i])
    return out


@dataclass(frozen=True)
class ScalarDist:
    """Scalar law ``loc + scale * Y`` with ``Y`` a standard shape."""

    loc: float = 0.0
    scale: float = 1.0

    kind = "abstract"

    def __post_init__(self):
        if not (np.isfinite(self.loc) and np.isfinite(self.scale)) or self.scale <= 0:
            raise ConfigurationError(f"{self.kind}: scale must be finite and > 0, got {self.scale}")

    # shape-level hooks -----------------------------------------------------
    def _base_moments(self, order: int) -> np.ndarray:
        raise NotImplementedError

    def _base_rule(self, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def base_key(self) -> tuple:
        """Identifies the standard shape; laws sharing it sample in one batch."""
        raise NotImplementedError

    def _base_from_uniforms(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # public -----------------------------------------------------------------
    def raw_moments(self, order: int = MOMENT_ORDER) -> np.ndarray:
        return _affine_moments(self._base_moments(order), self.loc, self.scale)

    @property
    def exact_moments(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.raw_moments(MOMENT_ORDER))

    @property
    def mean(self) -> float:
        return float(self.raw_moments(1)[1])

    @property
    def var(self) -> float:
        m = self.raw_moments(2)
        return float(m[2] - m[1] ** 2)

    def quadrature(self, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights; exact for polynomials of degree <= 2*n_nodes - 1."""
        x, w = self._base_rule(n_nodes)
        return self.loc + self.scale * x, w

    def from_uniforms(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        return self.loc + self.scale * self._base_from_uniforms(u1, u2)


@dataclass(frozen=True)
class Normal(ScalarDist):
    kind = "normal"

    @classmethod
    def of(cls, mean: float = 0.0, sd: float = 1.0) -> "Normal":
        return cls(loc=mean, scale=sd)

    def _base_moments(self, order):
        return _std_normal_moments(order)

    def _base_rule(self, n_nodes):
        x, w = hermite_e.hermegauss(n_nodes)
        return x, w / math.sqrt(2.0 * math.pi)

    def base_key(self):
        return ("normal",)

    def _base_from_uniforms(self, u1, u2):
        return ndtri(u1)


@dataclass(frozen=True)
class Uniform(ScalarDist):
    kind = "uniform"

    @classmethod
    def of(cls, a: float = 0.0, b: float = 1.0) -> "Uniform":
        if not a < b:
            raise ConfigurationError(f"uniform needs a < b, got ({a}, {b})")
        return cls(loc=a, scale=b - a)

    def _base_moments(self, order):
        return 1.0 / np.arange(1, order + 2)

    def _base_rule(self, n_nodes):
        x, w = legendre.leggauss(n_nodes)
        return (x + 1.0) / 2.0, w / 2.0

    def base_key(self):
        return ("uniform",)

    def _base_from_uniforms(self, u1, u2):
        return u1


@dataclass(frozen=True)
class Bernoulli(ScalarDist):
    q: float = 0.5

    kind = "bernoulli"

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.q <= 1.0:
            raise ConfigurationError(f"bernoulli needs 0 <= q <= 1, got {self.q}")

    @classmethod
    def standardized(cls, q: float) -> "Bernoulli":
        """Centred, unit-variance Bernoulli(q); skewed for small q."""
        sd = math.sqrt(q * (1.0 - q))
        return cls(loc=-q / sd, scale=1.0 / sd, q=q)

    def _base_moments(self, order):
        out = np.full(order + 1, self.q)
        out[0] = 1.0
        return out

    def _base_rule(self, n_nodes):
        return np.array([0.0, 1.0]), np.array([1.0 - self.q, self.q])

    def base_key(self):
        return ("bernoulli", self.q)

    def _base_from_uniforms(self, u1, u2):
        return (u1 < self.q).astype(float)


@dataclass(frozen=True)
class Mixture(ScalarDist):
    """Finite normal mixture (the ``custom-mixture`` kind)."""

    weights: tuple[float, ...] = (1.0,)
    means: tuple[float, ...] = (0.0,)
    sds: tuple[float, ...] = (1.0,)

    kind = "custom-mixture"

    def __post_init__(self):
        super().__post_init__()
        w = np.asarray(self.weights, float)
        if not (len(self.weights) == len(self.means) == len(self.sds)) or len(w) == 0:
            raise ConfigurationError("mixture weights/means/sds must have equal nonzero length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 or np.any(np.asarray(self.sds) <= 0):
            raise ConfigurationError("mixture weights must be a probability vector and sds > 0")

    @classmethod
    def standardized_skewed(cls) -> "Mixture":
        """0.8 N(-0.5, 0.5^2) + 0.2 N(2, 1), rescaled to mean 0 and variance 1."""
        return cls(loc=0.0, scale=1.0 / math.sqrt(1.4), weights=(0.8, 0.2), means=(-0.5, 2.0), sds=(0.5, 1.0))

    def _base_moments(self, order):
        return sum(w * _normal_moments(m, s, order) for w, m, s in zip(self.weights, self.means, self.sds))

    def _base_rule(self, n_nodes):
        xs, ws = [], []
        x0, w0 = hermite_e.hermegauss(n_nodes)
        w0 = w0 / math.sqrt(2.0 * math.pi)
        for w, m, s in zip(self.weights, self.means, self.sds):
            xs.append(m + s * x0)
            ws.append(w * w0)
        return np.concatenate(xs), np.concatenate(ws)

    def base_key(self):
        return ("mixture", self.weights, self.means, self.sds)

    def _base_from_uniforms(self, u1, u2):
        cw = np.cumsum(self.weights)
        comp = np.minimum(np.searchsorted(cw, u1, side="right"), len(cw) - 1)
        return np.asarray(self.means)[comp] + np.asarray(self.sds)[comp] * ndtri(u2)


@dataclass(frozen=True)
class MarginalModel:
    """Law ``P_i`` of one observation: independent scalar coordinates."""

    index: int
    components: tuple[ScalarDist, ...]

    def __post_init__(self):
        if self.index < 0:
            raise ConfigurationError("index must be >= 0")
        if not self.components:
            raise ConfigurationError("a marginal needs at least one component")

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def dist_kind(self) -> tuple[str, ...]:
        return tuple(c.kind for c in self.components)

    @property
    def exact_moments(self) -> tuple[tuple[float, ...], ...]:
        return tuple(c.exact_moments for c in self.components)

    def quadrature(self, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor-product rule: nodes ``(K, dim)`` and weights ``(K,)``."""
        rules = [c.quadrature(n_nodes) for c in self.components]
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        wgrid = np.meshgrid(*[r[1] for r in rules], indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        weights = np.prod(np.stack([g.ravel() for g in wgrid], axis=-1), axis=-1)
        return nodes, weights

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return draw_values([self] * 1, rng, size=size)[:, 0, :]


@dataclass(frozen=True)
class IndexedSample:
    """``n`` independent observations, row ``i`` drawn from ``marginals[i]``."""

    values: np.ndarray
    marginals: tuple[MarginalModel, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != len(self.marginals):
            raise ConfigurationError("values must have one row per marginal")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def replace_row(self, i: int, row: np.ndarray) -> "IndexedSample":
        v = self.values.copy()
        v[i] = row
        return IndexedSample(v, self.marginals)


def _uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    # Generator.random is on [0, 1); keep away from 0 so ndtri stays finite
    return np.maximum(rng.random(shape), 2.0**-60)


def draw_values(marginals: Sequence[MarginalModel], rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Vectorized draw; shape ``(n, dim)`` or ``(size, n, dim)``.

    Each scalar coordinate consumes exactly two uniforms at a fixed position,
    so the value of ``(i, c)`` never depends on the laws of other indices.
    """
    n = len(marginals)
    dim = marginals[0].dim
    if any(m.dim != dim for m in marginals):
        raise ConfigurationError("all marginals in a sample must share one dimension")
    lead = () if size is None else (size,)
    u1 = _uniforms(rng, lead + (n, dim))
    u2 = _uniforms(rng, lead + (n, dim))
    out = np.empty(lead + (n, dim))
    groups: dict[tuple, list[tuple[int, int]]] = {}
    for i, m in enumerate(marginals):
        for c, comp in enumerate(m.components):
            groups.setdefault((type(comp), comp.base_key()), []).append((i, c))
    for (_, _), cells in groups.items():
        ii = np.array([a for a, _ in cells])
        cc = np.array([b for _, b in cells])
        proto = marginals[ii[0]].components[cc[0]]
        loc = np.array([marginals[a].components[b].loc for a, b in cells])
        scale = np.array([marginals[a].components[b].scale for a, b in cells])
        base = proto._base_from_uniforms(u1[..., ii, cc], u2[..., ii, cc])
        out[..., ii, cc] = loc + scale * base
    return out


@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    se: float
    exact: bool


def exact_integral(m: MarginalModel, f: Callable | np.polynomial.Polynomial, budget: int = 20000, seed: int = 0) -> IntegralEstimate:
    """``P_i f``: exact from moments for a polynomial of a scalar marginal, else MC."""
    if isinstance(f, np.polynomial.Polynomial) and m.dim == 1:
        coef = f.convert().coef
        mom = m.components[0].raw_moments(len(coef) - 1)
        return IntegralEstimate(float(np.dot(coef, mom)), 0.0, True)
    if budget < 1:
        raise ConfigurationError("budget must be >= 1")
    x = m.draw(stream(seed, 0, "exact_integral", m.index), budget)
    fx = np.asarray(f(x[:, 0] if m.dim == 1 else x), dtype=float)
    bad = np.flatnonzero(~np.isfinite(fx))
    if bad.size:
        raise NumericalError(f"non-finite integrand for marginal index {m.index} at draw {bad[0]}")
    se = float(fx.std(ddof=1) / math.sqrt(budget)) if budget > 1 else float("inf")
    return IntegralEstimate(float(fx.mean()), se, False)


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_kind: str
    n: int
    p: int
    seed: int = 0
    replications: int = 1
    quadrature_budget: int = 20000
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario_kind not in SCENARIO_KINDS:
            raise ConfigurationError(f"unknown scenario_kind {self.scenario_kind!r}")
        if int(self.n) < 2:
            raise ConfigurationError("n must be >= 2")
        if int(self.p) < 3:
            raise ConfigurationError("p must be >= 3 so that log p > 1")
        if int(self.replications) < 1 or int(self.quadrature_budget) < 1:
            raise ConfigurationError("replications and quadrature_budget must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "params", dict(self.params))

    def to_dict(self) -> dict:
        return {
            "scenario_kind": self.scenario_kind,
            "n": int(self.n),
            "p": int(self.p),
            "seed": int(self.seed),
            "replications": int(self.replications),
            "quadrature_budget": int(self.quadrature_budget),
            "params": dict(self.params),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScenarioConfig":
        known = {"scenario_kind", "n", "p", "seed", "replications", "quadrature_budget", "params"}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown ScenarioConfig fields: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    def with_(self, **changes) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig.from_dict(d)

    @property
    def sample_size(self) -> int:
        """Number of i.n.i.d. indices (``n + m`` for the two-sample kinds)."""
        if self.scenario_kind in ("two-sample", "sep-exchangeable"):
            return int(self.n) + int(self.params.get("m", self.n))
        return int(self.n)


def error_shape(name: str, q: float = 0.1) -> ScalarDist:
    """Mean-zero, unit-variance error law by name."""
    if name == "normal":
        return Normal()
    if name == "uniform":
        return Uniform.of(-math.sqrt(3.0), math.sqrt(3.0))
    if name == "bernoulli":
        return Bernoulli.standardized(q)
    if name == "mixture":
        return Mixture.standardized_skewed()
    raise ConfigurationError(f"unsupported error distribution {name!r}")


def _rescaled(d: ScalarDist, s: float, shift: float = 0.0) -> ScalarDist:
    return type(d)(**{**d.__dict__, "loc": shift + s * d.loc, "scale": s * d.scale})


def scenario_marginals(config: ScenarioConfig) -> tuple[MarginalModel, ...]:
    """Per-index laws for the built-in scenarios."""
    kind, n, prm = config.scenario_kind, int(config.n), config.params
    if kind == "product-kernel":
        style = prm.get("marginal", "mixed")
        out = []
        for i in range(n):
            s = 0.5 + i / max(n - 1, 1)
            mu = 0.5 * math.sin(i + 1.0)
            if style == "normal" or (style == "mixed" and i % 2 == 0):
                comp = Normal.of(mu, s)
            elif style in ("uniform", "mixed"):
                comp = Uniform.of(mu - s * math.sqrt(3.0), mu + s * math.sqrt(3.0))
            else:
                comp = _rescaled(error_shape(style, prm.get("q", 0.1)), s, mu)
            out.append(MarginalModel(i, (comp,)))
        return tuple(out)
    if kind in ("weak-iv", "plm"):
        base = error_shape(prm.get("error", "normal"), prm.get("q", 0.1))
        hetero = float(prm.get("hetero", 0.5))
        out = []
        for i in range(n):
            s = 1.0 + hetero * (i / max(n - 1, 1) - 0.5)
            out.append(MarginalModel(i, (_rescaled(base, s), _rescaled(base, s))))
        return tuple(out)
    if kind == "two-sample":
        m = int(prm.get("m", n))
        shift = float(prm.get("shift", 0.0))
        d = int(prm.get("d", 1))
        out = [MarginalModel(i, tuple(Normal.of(0.0, 1.0) for _ in range(d))) for i in range(n)]
        out += [MarginalModel(n + t, tuple(Normal.of(shift, 1.0) for _ in range(d))) for t in range(m)]
        return tuple(out)
    if kind == "sep-exchangeable":
        m = int(prm.get("m", n))
        base = error_shape(prm.get("latent", "normal"), prm.get("q", 0.1))
        p = int(config.p)
        return tuple(MarginalModel(a, tuple(base for _ in range(p))) for a in range(n + m))
    raise ConfigurationError(f"unsupported scenario kind {kind!r}")


def sample(config: ScenarioConfig, rep_id: int, marginals: Sequence[MarginalModel] | None = None) -> IndexedSample:
    """Draw replication ``rep_id``; a pure function of ``(config.seed, rep_id)``."""
    if not 0 <= rep_id < int(config.replications):
        raise ConfigurationError(f"rep_id {rep_id} outside [0, {config.replications})")
    margs = tuple(marginals) if marginals is not None else scenario_marginals(config)
    values = draw_values(margs, stream(config.seed, rep_id, "sample"))
    return IndexedSample(values, margs)
