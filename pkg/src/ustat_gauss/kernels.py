"""Index-dependent symmetric kernel families.

A family holds ``p`` kernels ``psi_j`` with ``psi_{j,(i,m)}(x, y)``.  Kernels are
pure evaluation maps and are never materialized as ``n x n x p`` tables.

Evaluation convention: ``eval(j, i, m, x, y)`` takes integer (arrays of)
indices ``i, m`` (0-based) and points ``x, y`` of shape ``(..., d)``; all of
them broadcast against each other and the result has the broadcast shape
without the trailing ``d``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, UsageError
from .rng import stream

KernelFunc = Callable[[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
DiagFunc = Callable[[int, np.ndarray, np.ndarray], np.ndarray]
Phi = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KernelFamily:
    """``p`` symmetric kernels over ``n`` indices.

    ``degree`` is the largest polynomial degree of a kernel in either argument
    (``None`` for non-polynomial kernels); projection oracles use it to pick a
    quadrature rule that is exact for every integral they need.
    """

    n: int
    p: int
    func: KernelFunc
    diag_func: DiagFunc | None = None
    degenerate: tuple[bool, ...] = ()
    two_sample_split: tuple[int, int] | None = None
    degree: int | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ConfigurationError("a kernel family needs n >= 2 and p >= 1")
        if not self.degenerate:
            object.__setattr__(self, "degenerate", (False,) * self.p)
        if len(self.degenerate) != self.p:
            raise ConfigurationError("one degeneracy flag per kernel")
        if self.two_sample_split is not None and sum(self.two_sample_split) != self.n:
            raise ConfigurationError("two-sample split must add up to n")

    def eval(self, j: int, i, m, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.asarray(self.func(j, np.asarray(i), np.asarray(m), x, y), dtype=float)

    def diag_eval(self, j: int, i, x) -> np.ndarray:
        if self.diag_func is None:
            raise UsageError(f"kernel family {self.name!r} has no diagonal kernel (needed for V-statistics)")
        return np.asarray(self.diag_func(j, np.asarray(i), np.asarray(x, dtype=float)), dtype=float)

    @property
    def has_diag(self) -> bool:
        return self.diag_func is not None

    def gram(self, j: int, values: np.ndarray) -> np.ndarray:
        """``psi_{j,(i,m)}(x_i, x_m)`` for all pairs; the diagonal is set to 0."""
        v = np.asarray(values, dtype=float)
        idx = np.arange(v.shape[0])
        g = self.eval(j, idx[:, None], idx[None, :], v[:, None, :], v[None, :, :])
        np.fill_diagonal(g, 0.0)
        return g

    def scaled(self, c: float) -> "KernelFamily":
        f, dfun = self.func, self.diag_func
        return replace(
            self,
            func=lambda j, i, m, x, y: c * f(j, i, m, x, y),
            diag_func=None if dfun is None else (lambda j, i, x: c * dfun(j, i, x)),
            name=f"{c:g}*{self.name}",
        )

    def subset(self, js: Sequence[int]) -> "KernelFamily":
        js = list(js)
        f, dfun = self.func, self.diag_func
        return replace(
            self,
            p=len(js),
            func=lambda j, i, m, x, y: f(js[j], i, m, x, y),
            diag_func=None if dfun is None else (lambda j, i, x: dfun(js[j], i, x)),
            degenerate=tuple(self.degenerate[k] for k in js),
        )


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric pair weights ``w(i, m)``; ``diag`` only matters for V-forms."""

    w: np.ndarray
    diag: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ConfigurationError("weight matrix must be square")
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("weight matrix has non-finite entries")
        off = w - np.diag(np.diag(w))
        scale = max(float(np.max(np.abs(off))), 1e-300)
        asym = np.abs(off - off.T)
        if np.max(asym) > 1e-12 * scale:
            i, m = np.unravel_index(np.argmax(asym), asym.shape)
            raise ConfigurationError(f"weight matrix is not symmetric at ({i}, {m}): {w[i, m]} != {w[m, i]}")
        sym = (off + off.T) / 2.0
        sym.setflags(write=False)
        object.__setattr__(self, "w", sym)
        if self.diag is not None:
            d = np.asarray(self.diag, dtype=float).copy()
            if d.shape != (w.shape[0],) or not np.all(np.isfinite(d)):
                raise ConfigurationError("diagonal weights must be a finite length-n vector")
            d.setflags(write=False)
            object.__setattr__(self, "diag", d)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @classmethod
    def from_matrix(cls, a: np.ndarray, keep_diag: bool = False) -> "WeightMatrix":
        a = np.asarray(a, dtype=float)
        return cls(a, np.diag(a).copy() if keep_diag else None)


def _per_kernel(obj, p: int, what: str) -> list:
    if isinstance(obj, (list, tuple)):
        if len(obj) != p:
            raise ConfigurationError(f"need {p} {what}, got {len(obj)}")
        return list(obj)
    return [obj] * p


def make_weighted(
    w: WeightMatrix | Sequence[WeightMatrix],
    phi: Phi | Sequence[Phi],
    p: int | None = None,
    degree: int | None = None,
    name: str = "weighted",
) -> KernelFamily:
    """``psi_{j,(i,m)} = w_j(i, m) * phi_j`` with index-free symmetric ``phi_j``."""
    if p is None:
        p = len(w) if isinstance(w, (list, tuple)) else len(phi) if isinstance(phi, (list, tuple)) else 1
    ws = _per_kernel(w, p, "weight matrices")
    phis = _per_kernel(phi, p, "phi kernels")
    n = ws[0].n
    if any(wm.n != n for wm in ws):
        raise ConfigurationError("all weight matrices must share n")
    mats = [wm.w for wm in ws]

    def func(j, i, m, x, y):
        return mats[j][i, m] * phis[j](x, y)

    diag_func = None
    if all(wm.diag is not None for wm in ws):
        diags = [wm.diag for wm in ws]

        def diag_func(j, i, x):
            return diags[j][i] * phis[j](x, x)

    return KernelFamily(n=n, p=p, func=func, diag_func=diag_func, degree=degree, name=name)


def make_two_sample(
    n1: int,
    n2: int,
    c1: float,
    c2: float,
    c3: float,
    phi1: Phi,
    phi2: Phi,
    phi3: Phi,
    degree: int | None = None,
    name: str = "two-sample",
) -> KernelFamily:
    """Single two-sample kernel on ``I = {0..n1-1}``, ``J = {n1..n1+n2-1}``.

    Cross pairs evaluate ``phi3`` with the first-sample point first, which is
    the same thing for a symmetric ``phi3`` and keeps non-symmetric cross
    kernels (separately exchangeable arrays) index-symmetric.
    """
    return make_two_sample_family(n1, n2, [(c1, c2, c3, phi1, phi2, phi3)], degree=degree, name=name)


def make_two_sample_family(n1: int, n2: int, specs: Sequence[tuple], degree: int | None = None, name: str = "two-sample") -> KernelFamily:
    """``p`` two-sample kernels, one ``(c1, c2, c3, phi1, phi2, phi3)`` per coordinate."""
    if n1 < 1 or n2 < 1:
        raise ConfigurationError("both samples must be nonempty")
    specs = list(specs)

    def func(j, i, m, x, y):
        c1, c2, c3, f1, f2, f3 = specs[j]
        in_i, in_m = i < n1, m < n1
        if f1 is f2 and f2 is f3:
            # one symmetric phi for all blocks: a single evaluation scaled per block
            coef = np.where(in_i & in_m, c1, np.where(~in_i & ~in_m, c2, c3))
            return coef * f1(x, y)
        both_i = in_i & in_m
        both_j = ~in_i & ~in_m
        out = np.zeros(np.broadcast_shapes(np.shape(i), np.shape(m), x.shape[:-1], y.shape[:-1]))
        if c1 != 0.0 and np.any(both_i):
            out = np.where(both_i, c1 * f1(x, y), out)
        if c2 != 0.0 and np.any(both_j):
            out = np.where(both_j, c2 * f2(x, y), out)
        cross = in_i != in_m
        if c3 != 0.0 and np.any(cross):
            xa = np.where(in_i[..., None] if np.ndim(in_i) else in_i, x, y)
            yb = np.where(in_i[..., None] if np.ndim(in_i) else in_i, y, x)
            out = np.where(cross, c3 * f3(xa, yb), out)
        return out

    return KernelFamily(n=n1 + n2, p=len(specs), func=func, two_sample_split=(n1, n2), degree=degree, name=name)


@dataclass(frozen=True)
class GaussianSmoother:
    """``phi_h(x, y) = h^{-d} K((x - y) / h)`` with ``K`` the standard normal density."""

    h: float
    d: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise DomainError(f"bandwidth must be > 0, got {self.h}")
        if self.d < 1:
            raise DomainError("dimension must be >= 1")

    def __call__(self, x, y) -> np.ndarray:
        diff = (np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) / self.h
        sq = np.sum(diff * diff, axis=-1)
        return np.exp(-0.5 * sq) / ((2.0 * math.pi) ** (self.d / 2.0) * self.h**self.d)


def make_gaussian_smoother(h: float, d: int = 1) -> GaussianSmoother:
    return GaussianSmoother(float(h), int(d))


def mmd_weights(n: int, m: int) -> tuple[float, float, float]:
    """Block weights of the unbiased MMD^2 estimate: I x I, J x J, cross."""
    return 1.0 / (n * (n - 1)), 1.0 / (m * (m - 1)), -1.0 / (n * m)


def make_mmd_family(n: int, m: int, bandwidths: Sequence[float], d: int = 1) -> KernelFamily:
    """One weighted two-sample Gaussian kernel per bandwidth."""
    c1, c2, c3 = mmd_weights(n, m)
    specs = []
    for h in bandwidths:
        phi = make_gaussian_smoother(h, d)
        specs.append((c1, c2, c3, phi, phi, phi))
    return make_two_sample_family(n, m, specs, degree=None, name="gaussian_mmd")


def make_polynomial(coefs: np.ndarray, w: WeightMatrix | None = None, n: int | None = None, name: str = "product_poly") -> KernelFamily:
    """Scalar polynomial kernels ``w(i,m) * sum_ab C_j[a,b] x^a y^b``.

    ``coefs`` has shape ``(p, D+1, D+1)`` and must be symmetric in its last two
    axes.  Without ``w`` every pair weight is 1 and the diagonal kernel is the
    same polynomial at ``(x, x)``.
    """
    c = np.asarray(coefs, dtype=float)
    if c.ndim != 3 or c.shape[1] != c.shape[2]:
        raise ConfigurationError("coefs must have shape (p, D+1, D+1)")
    if not np.allclose(c, np.swapaxes(c, 1, 2), rtol=0, atol=1e-14):
        raise ConfigurationError("polynomial coefficient matrices must be symmetric")
    c = (c + np.swapaxes(c, 1, 2)) / 2.0
    p, D = c.shape[0], c.shape[1] - 1
    if w is None:
        if n is None:
            raise ConfigurationError("pass n when no weight matrix is given")
        w = WeightMatrix(np.ones((n, n)), np.ones(n))
    wmat, wdiag = w.w, w.diag
    powers = np.arange(D + 1)

    def poly(j, x, y):
        xp = x[..., 0, None] ** powers
        yp = y[..., 0, None] ** powers
        return np.einsum("...a,ab,...b->...", xp, c[j], yp)

    def func(j, i, m, x, y):
        return wmat[i, m] * poly(j, x, y)

    diag_func = None
    if wdiag is not None:

        def diag_func(j, i, x):
            return wdiag[i] * poly(j, x, x)

    return KernelFamily(n=w.n, p=p, func=func, diag_func=diag_func, degree=D, name=name)


def zero_family(n: int, p: int) -> KernelFamily:
    def func(j, i, m, x, y):
        return np.zeros(np.broadcast_shapes(np.shape(i), np.shape(m), x.shape[:-1], y.shape[:-1]))

    def diag_func(j, i, x):
        return np.zeros(np.broadcast_shapes(np.shape(i), x.shape[:-1]))

    return KernelFamily(n=n, p=p, func=func, diag_func=diag_func, degenerate=(True,) * p, degree=0, name="zero")


@dataclass(frozen=True)
class SymmetryReport:
    passed: bool
    trials: int
    violation: tuple | None = None  # (j, i, m, x, y, psi(x,y), psi'(y,x))


def audit_symmetry(k: KernelFamily, trials: int, seed: int = 0, dim: int = 1, rtol: float = 1e-12) -> SymmetryReport:
    """Compare ``psi_{j,(i,m)}(x, y)`` with ``psi_{j,(m,i)}(y, x)`` on random tuples."""
    if trials < 1:
        raise UsageError("trials must be >= 1")
    rng = stream(seed, 0, "audit_symmetry")
    j = rng.integers(0, k.p, size=trials)
    i = rng.integers(0, k.n, size=trials)
    m = (i + rng.integers(1, k.n, size=trials)) % k.n
    x = rng.standard_normal((trials, dim))
    y = rng.standard_normal((trials, dim))
    a = np.empty(trials)
    b = np.empty(trials)
    for jj in range(k.p):
        sel = np.flatnonzero(j == jj)
        if sel.size:
            a[sel] = k.eval(jj, i[sel], m[sel], x[sel], y[sel])
            b[sel] = k.eval(jj, m[sel], i[sel], y[sel], x[sel])
    bad = np.flatnonzero(np.abs(a - b) > rtol * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))
    if bad.size:
        t = bad[0]
        return SymmetryReport(False, trials, (int(j[t]), int(i[t]), int(m[t]), x[t].copy(), y[t].copy(), float(a[t]), float(b[t])))
    return SymmetryReport(True, trials, None)


def check_fourth_moments(k: KernelFamily, draws: np.ndarray, pairs: int = 2000, seed: int = 0) -> bool:
    """Empirical L^4 finiteness check on sampled pairs; warns when it fails.

    ``draws`` has shape ``(reps, n, d)``; integrability cannot be verified
    symbolically, so this is only a screen.
    """
    rng = stream(seed, 0, "fourth_moment")
    r = rng.integers(0, draws.shape[0], size=pairs)
    i = rng.integers(0, k.n, size=pairs)
    m = (i + rng.integers(1, k.n, size=pairs)) % k.n
    ok = True
    for j in range(k.p):
        v = k.eval(j, i, m, draws[r, i], draws[r, m])
        if not np.all(np.isfinite(v)) or not np.isfinite(np.mean(v**4)):
            warnings.warn(f"kernel {j} of {k.name!r}: empirical fourth moment is not finite", RuntimeWarning)
            ok = False
    return ok
