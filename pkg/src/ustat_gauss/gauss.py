"""Gaussian comparison: covariance, Gaussian draws and rectangle distances.

The supremum over all rectangles cannot be computed; ``rectangle_distance``
maximizes over a finite sub-class (max- and min-type orthants on a quantile
grid plus random boxes), so every value it returns is a lower bound on the
distance over all rectangles.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .rng import stream

PSD_FLOOR = 1e-10


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma_matrix: np.ndarray
    source: str  # "hoeffding-formula" or "replication"
    se_matrix: np.ndarray | None = None
    reps: int | None = None

    @property
    def p(self) -> int:
        return self.sigma_matrix.shape[0]


def clip_psd(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetrize, eigendecompose and clip negative eigenvalues to zero.

    Eigenvalues below ``-1e-10 * trace`` are reported with a warning before
    being clipped.
    """
    s = (np.asarray(s, dtype=float) + np.asarray(s, dtype=float).T) / 2.0
    lam, vec = np.linalg.eigh(s)
    tr = float(np.trace(s))
    if lam.size and lam[0] < -PSD_FLOOR * max(tr, 0.0):
        warnings.warn(f"covariance has eigenvalue {lam[0]:.3g} below the PSD floor; clipping", RuntimeWarning)
    lam = np.maximum(lam, 0.0)
    return (vec * lam) @ vec.T, lam, vec


def covariance_from_matrix(s: np.ndarray, source: str = "hoeffding-formula") -> CovarianceEstimate:
    clipped, _, _ = clip_psd(s)
    return CovarianceEstimate(clipped, source)


def covariance_from_oracle(oracle, form: str = "U") -> CovarianceEstimate:
    return covariance_from_matrix(oracle.covariance(form), "hoeffding-formula")


def covariance_from_replications(draws: np.ndarray) -> CovarianceEstimate:
    """Sample covariance (about the sample mean) with entrywise standard errors."""
    x = np.asarray(draws, dtype=float)
    R, p = x.shape
    if R < p + 1:
        raise UsageError(f"replication covariance needs at least p+1={p + 1} draws, got {R}")
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / (R - 1)
    prods = xc[:, :, None] * xc[:, None, :]
    se = prods.std(axis=0, ddof=1) / math.sqrt(R)
    clipped, _, _ = clip_psd(s)
    return CovarianceEstimate(clipped, "replication", se, R)


def sample_gaussian(cov: CovarianceEstimate | np.ndarray, count: int, seed: int = 0, rep_id: int = 0) -> np.ndarray:
    """``count x p`` draws from ``N(0, Sigma)`` through a symmetric square root."""
    s = cov.sigma_matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)
    _, lam, vec = clip_psd(s)
    root = (vec * np.sqrt(lam)) @ vec.T  # invariant to eigenvector signs
    z = stream(seed, rep_id, "gaussian").standard_normal((count, s.shape[0]))
    return z @ root.T


def studentize(draws: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise UsageError("studentizing needs strictly positive sigma")
    return np.asarray(draws, dtype=float) / sigma


@dataclass(frozen=True)
class RectDistanceEstimate:
    value: float
    se: float
    grid: int
    random_rects: int
    r_w: int
    r_z: int
    argmax: str = ""
    lower_bound: bool = True  # the class is a strict subset of all rectangles


def _van_der_corput(k: np.ndarray) -> np.ndarray:
    out = np.zeros(len(k))
    denom = 1.0
    k = k.copy()
    while np.any(k > 0):
        denom *= 2.0
        out += (k % 2) / denom
        k //= 2
    return out


def grid_levels(G: int, lo: float = 0.001, hi: float = 0.999) -> np.ndarray:
    """Nested quantile levels: the first ``G`` points of a van der Corput sequence in ``[lo, hi]``."""
    return lo + (hi - lo) * _van_der_corput(np.arange(1, G + 1))


def _ecdf_le(sorted_vals: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.searchsorted(sorted_vals, t, side="right") / len(sorted_vals)


def rectangle_distance(w_draws, z_draws, grid: int = 50, random_rects: int = 200, seed: int = 0) -> RectDistanceEstimate:
    """``max_A |P_W(A) - P_Z(A)|`` over a finite rectangle class.

    The class contains closed orthants ``{v_j <= t s_j for all j}`` and
    ``{v_j >= -t s_j for all j}`` at ``grid`` pooled quantiles of the max / min
    statistic, and ``random_rects`` boxes whose corners are pooled
    coordinatewise quantiles.  ``s_j`` is the pooled standard deviation, so
    the estimate is unchanged when both draw sets are rescaled coordinatewise.
    """
    w = np.asarray(w_draws, dtype=float)
    z = np.asarray(z_draws, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if z.ndim == 1:
        z = z[:, None]
    if len(w) == 0 or len(z) == 0:
        raise UsageError("rectangle_distance needs two nonempty draw sets")
    if w.shape[1] != z.shape[1]:
        raise UsageError("draw sets must have the same dimension")
    if grid < 10 or random_rects < 100:
        raise UsageError("need grid >= 10 and random_rects >= 100")
    pooled = np.concatenate([w, z])
    s = pooled.std(axis=0)
    s = np.where(s > 0, s, 1.0)
    ws, zs, ps = w / s, z / s, pooled / s
    p = w.shape[1]
    levels = grid_levels(grid)

    best, where = 0.0, ""
    for name, fn in (("max", np.max), ("min", np.min)):
        mw, mz, mp = np.sort(fn(ws, axis=1)), np.sort(fn(zs, axis=1)), fn(ps, axis=1)
        t = np.quantile(mp, levels)
        if name == "max":
            gap = np.abs(_ecdf_le(mw, t) - _ecdf_le(mz, t))
        else:
            # P(min >= t) = 1 - P(min < t)
            lt_w = np.searchsorted(mw, t, side="left") / len(mw)
            lt_z = np.searchsorted(mz, t, side="left") / len(mz)
            gap = np.abs(lt_w - lt_z)
        k = int(np.argmax(gap))
        if gap[k] > best:
            best, where = float(gap[k]), f"{name}-orthant t={t[k]:.6g}"

    lo, hi = _random_boxes(ps, random_rects, seed)
    fw = _box_freq(ws, lo, hi)
    fz = _box_freq(zs, lo, hi)
    gap = np.abs(fw - fz)
    k = int(np.argmax(gap))
    if gap[k] > best:
        best, where = float(gap[k]), f"box #{k}"
    se = math.sqrt(math.log(2 * grid + random_rects) / (2.0 * min(len(w), len(z))))
    return RectDistanceEstimate(best, se, grid, random_rects, len(w), len(z), where)


def _random_boxes(pooled: np.ndarray, K: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    p = pooled.shape[1]
    srt = np.sort(pooled, axis=0)
    N = len(srt)
    lo = np.empty((K, p))
    hi = np.empty((K, p))
    for k in range(K):
        rng = stream(seed, k, "random_rectangle")
        cover = rng.uniform(0.05, 0.95)
        width = cover ** (1.0 / p)
        a = rng.uniform(0.0, 1.0 - width, size=p)
        b = a + width
        # snap ends near 0 / 1 to half-infinite sides
        ia = np.clip((a * N).astype(int), 0, N - 1)
        ib = np.clip((b * N).astype(int), 0, N - 1)
        lo[k] = np.where(a < 0.5 / N, -np.inf, srt[ia, np.arange(p)])
        hi[k] = np.where(b > 1.0 - 0.5 / N, np.inf, srt[ib, np.arange(p)])
    return lo, hi


def _box_freq(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, chunk: int = 4096) -> np.ndarray:
    counts = np.zeros(len(lo))
    for s in range(0, len(x), chunk):
        blk = x[s : s + chunk]
        inside = np.all((blk[None, :, :] >= lo[:, None, :]) & (blk[None, :, :] <= hi[:, None, :]), axis=2)
        counts += inside.sum(axis=1)
    return counts / len(x)


def glue_bounds(delta1: float, delta2: float, delta3: float) -> float:
    """Sum of the conditional, comparison and unconditional distance bounds."""
    vals = (float(delta1), float(delta2), float(delta3))
    if any(not math.isfinite(v) or v < 0 for v in vals):
        raise UsageError(f"gluing needs nonnegative finite inputs, got {vals}")
    return vals[0] + vals[1] + vals[2]
