"""Law of the running minimum m = min_{[0,1]} x.

Three routes to the density of m:

* direct: empirical CDF of SDE paths, differenced over r +/- delta;
* weighted: Brownian paths reweighted by Psi, same differencing;
* survival: F(r) = E_W[Psi; m >= r] differenced with common paths, plus the
  one-sided band estimate (1/eps) E_W[Psi; r <= m <= r + eps].

Standard errors are batch means over 100 contiguous batches; weighted
(self-normalised) estimates use the delta method on the batch means.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, log_ndtr

from .drift import DriftSpec
from .engine import PathSample, effective_sample_size, simulate
from .errors import DomainError, NumericError
from .paths import Grid

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
N_BATCHES = 100
DEFAULT_R_GRID = (-2.5, -0.05, 40)
ESS_WARN_FRACTION = 0.01


# ---------------------------------------------------------------- oracles


def brownian_min_density(r):
    r = np.asarray(r, dtype=float)
    out = np.where(r <= 0, SQRT_2_OVER_PI * np.exp(-0.5 * r * r), 0.0)
    return float(out) if out.ndim == 0 else out


def brownian_min_cdf(r):
    r = np.asarray(r, dtype=float)
    out = np.where(r <= 0, 2.0 * ndtr(np.minimum(r, 0.0)), 1.0)
    return float(out) if out.ndim == 0 else out


def drifted_min_cdf(c: float, r):
    """P(min_{[0,1]} (c t + B_t) <= r) by the reflection formula; 1 for r > 0."""
    r = np.asarray(r, dtype=float)
    rr = np.minimum(r, 0.0)
    out = ndtr(rr - c) + np.exp(2.0 * c * rr + log_ndtr(rr + c))
    out = np.where(r > 0, 1.0, np.minimum(out, 1.0))
    return float(out) if out.ndim == 0 else out


def drifted_min_density(c: float, r):
    """d/dr of :func:`drifted_min_cdf` for r < 0."""
    r = np.asarray(r, dtype=float)
    phi = np.exp(-0.5 * (r - c) ** 2) / math.sqrt(2 * math.pi)
    out = 2.0 * phi + 2.0 * c * np.exp(2.0 * c * r + log_ndtr(r + c))
    out = np.where(r <= 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- results


@dataclass
class DensityEstimate:
    r_grid: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    stderr_density: np.ndarray
    stderr_cdf: np.ndarray
    meta: dict = field(default_factory=dict)

    def at(self, r: float) -> int:
        """Index of the grid point nearest to ``r``."""
        return int(np.argmin(np.abs(self.r_grid - r)))

    def rows(self):
        m = self.meta
        for i, r in enumerate(self.r_grid):
            yield (r, self.density[i], self.stderr_density[i], self.cdf[i], self.stderr_cdf[i],
                   m.get("estimator", ""), m.get("n_paths", ""), m.get("dt", ""), m.get("seed", ""))


CSV_HEADER = ("r", "f", "stderr_f", "cdf", "stderr_cdf", "estimator", "n_paths", "dt", "seed")


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_density_csv(target, estimates: list[DensityEstimate]) -> None:
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for est in estimates:
            for row in est.rows():
                w.writerow([_fmt(x) for x in row])


@dataclass
class BandEstimate:
    value: float
    stderr: float
    hits: int
    degenerate: bool
    r: float
    eps: float


# ---------------------------------------------------------------- batch tallies


def r_grid_default(r_min=DEFAULT_R_GRID[0], r_max=DEFAULT_R_GRID[1], count=DEFAULT_R_GRID[2]):
    return np.linspace(r_min, r_max, int(count))


def _check_r_grid(r_grid) -> np.ndarray:
    r = np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise DomainError("r_grid must be a non-empty 1-D array")
    if r.size > 1 and np.any(np.diff(r) <= 0):
        raise DomainError("r_grid must be strictly ascending")
    if r[-1] >= 0:
        raise DomainError("r_grid must lie in (-inf, 0)")
    return r


def batch_edges(n: int, n_batches: int = N_BATCHES) -> np.ndarray:
    return np.linspace(0, n, min(n_batches, n) + 1).astype(int)


class Tally:
    """Per-batch weighted counts of ``m`` against thresholds.

    Weights are exp(log_psi - shift); unnormalised estimates multiply back
    by exp(shift).
    """

    def __init__(self, m: np.ndarray, log_psi: np.ndarray, n_batches: int = N_BATCHES):
        self.edges = batch_edges(m.size, n_batches)
        self.sizes = np.diff(self.edges).astype(float)
        shift = float(np.max(log_psi))
        w = np.exp(log_psi - shift)
        self.shift = shift
        self._sorted = []
        W = []
        for s, e in zip(self.edges[:-1], self.edges[1:]):
            order = np.argsort(m[s:e], kind="stable")
            ms = m[s:e][order]
            cw = np.concatenate(([0.0], np.cumsum(w[s:e][order])))
            self._sorted.append((ms, cw))
            W.append(cw[-1])
        self.W = np.array(W)
        self.n_eff = effective_sample_size(log_psi)

    def le(self, t) -> np.ndarray:
        """Batch sums of w 1{m <= t}; shape (B, k)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([cw[np.searchsorted(ms, t, side="right")] for ms, cw in self._sorted])

    def lt(self, t) -> np.ndarray:
        """Batch sums of w 1{m < t}."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([cw[np.searchsorted(ms, t, side="left")] for ms, cw in self._sorted])

    def ge(self, t) -> np.ndarray:
        return self.W[:, None] - self.lt(t)

    def ratio(self, A: np.ndarray, normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Estimate of E[w * quantity] (or its self-normalised version) from batch sums ``A``."""
        B = self.sizes.size
        a = A / self.sizes[:, None]
        if normalize:
            wb = self.W / self.sizes
            est = A.sum(axis=0) / self.W.sum()
            resid = a - est * wb[:, None]
            wbar = wb.mean()
            scale = 1.0
        else:
            est = A.sum(axis=0) / self.sizes.sum()
            resid = a - est
            wbar = 1.0
            try:
                scale = math.exp(self.shift)
            except OverflowError:
                raise NumericError(f"unnormalised weights overflow (max log-weight {self.shift:.1f})") from None
        se = np.std(resid, axis=0, ddof=1) / math.sqrt(B) / wbar if B > 1 else np.full(est.shape, np.nan)
        return est * scale, se * scale


def tally(sample: PathSample, refine: bool | None = None) -> Tally:
    return Tally(sample.minimum(refine), sample.log_psi)


# ---------------------------------------------------------------- estimators


def density_from_F(F_minus, F_plus, delta: float):
    """Central difference (F(r - delta) - F(r + delta)) / (2 delta)."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    return (np.asarray(F_minus, dtype=float) - np.asarray(F_plus, dtype=float)) / (2.0 * delta)


def _fd_points(r: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower/upper difference points; one-sided only where r + delta would reach 0."""
    lo = r - delta
    hi = r + delta
    edge = hi >= 0
    hi = np.where(edge, r, hi)
    width = np.where(edge, delta, 2 * delta)
    return lo, hi, width


def cdf_from_sample(sample: PathSample, r_grid, *, delta: float = 0.01, refine: bool | None = None,
                    normalize: bool = True, estimator: str | None = None,
                    tal: Tally | None = None) -> DensityEstimate:
    """CDF P(m <= r) and its difference-quotient density from one sample."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    r = _check_r_grid(r_grid)
    tal = tal or tally(sample, refine)
    cdf, se_cdf = tal.ratio(tal.le(r), normalize)
    lo, hi, width = _fd_points(r, delta)
    f, se_f = tal.ratio((tal.le(hi) - tal.le(lo)) / width, normalize)
    if estimator is None:
        estimator = "direct" if sample.measure == "sde" else "weighted"
    meta = sample.meta() | {"estimator": estimator, "delta": delta, "normalize": normalize,
                            "n_eff": tal.n_eff,
                            "low_ess": tal.n_eff < ESS_WARN_FRACTION * sample.n_paths}
    return DensityEstimate(r, f, cdf, se_f, se_cdf, meta)


def F_from_sample(sample: PathSample, r_grid, *, refine: bool | None = None,
                  normalize: bool = True, tal: Tally | None = None):
    """F(r) = E_W[Psi; m >= r] on a shared batch of paths."""
    r = np.atleast_1d(np.asarray(r_grid, dtype=float))
    tal = tal or tally(sample, refine)
    return tal.ratio(tal.ge(r), normalize)


def survival_density(sample: PathSample, r_grid, delta: float = 0.01, *, refine: bool | None = None,
                     normalize: bool = True, tal: Tally | None = None) -> DensityEstimate:
    """Density -F'(r) by central differences of F with common paths.

    The standard error comes from the paired (per-path) difference of the two
    indicators, which the batch tallies preserve.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    r = _check_r_grid(r_grid)
    tal = tal or tally(sample, refine)
    lo, hi, width = _fd_points(r, delta)
    F_r, se_F = tal.ratio(tal.ge(r), normalize)
    f, se_f = tal.ratio((tal.ge(lo) - tal.ge(hi)) / width, normalize)
    meta = sample.meta() | {"estimator": "survival", "delta": delta, "normalize": normalize,
                            "n_eff": tal.n_eff,
                            "low_ess": tal.n_eff < ESS_WARN_FRACTION * sample.n_paths}
    return DensityEstimate(r, f, 1.0 - F_r, se_f, se_F, meta)


def band_density(sample: PathSample, r: float, eps: float, *, refine: bool | None = None,
                 normalize: bool = True, tal: Tally | None = None) -> BandEstimate:
    """(1/eps) E_W[Psi; r <= m <= r + eps]."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    if r + eps >= 0:
        raise DomainError("need r + eps < 0")
    tal = tal or tally(sample, refine)
    A = (tal.le(r + eps) - tal.lt(r)) / eps
    val, se = tal.ratio(A, normalize)
    m = sample.minimum(refine)
    hits = int(np.count_nonzero((m >= r) & (m <= r + eps)))
    return BandEstimate(float(val[0]), float(se[0]), hits, hits == 0, float(r), float(eps))


def band_densities(sample: PathSample, r_grid, eps: float, **kw) -> DensityEstimate:
    """:func:`band_density` on every grid point, packaged like the other estimators."""
    r = _check_r_grid(r_grid)
    tal = kw.pop("tal", None) or tally(sample, kw.get("refine"))
    normalize = kw.get("normalize", True)
    bands = [band_density(sample, x, eps, tal=tal, **kw) for x in r]
    F_r, se_F = tal.ratio(tal.ge(r), normalize)
    meta = sample.meta() | {"estimator": "smoothed", "eps": eps,
                            "degenerate": [b.r for b in bands if b.degenerate]}
    return DensityEstimate(r, np.array([b.value for b in bands]), 1.0 - F_r,
                           np.array([b.stderr for b in bands]), se_F, meta)


def estimate_direct(spec: DriftSpec, n_paths: int, grid: Grid, r_grid, seed: int, refine: bool = True,
                    *, delta: float = 0.01, workers: int | None = None) -> DensityEstimate:
    _check_r_grid(r_grid)
    sample = simulate(spec, grid, n_paths, seed, measure="sde", refine=refine, workers=workers)
    return cdf_from_sample(sample, r_grid, delta=delta, estimator="direct")


def estimate_weighted(spec: DriftSpec, n_paths: int, grid: Grid, r_grid, seed: int, refine: bool = True,
                      *, delta: float = 0.01, normalize: bool = True,
                      workers: int | None = None) -> DensityEstimate:
    _check_r_grid(r_grid)
    sample = simulate(spec, grid, n_paths, seed, measure="wiener", refine=refine, workers=workers)
    return cdf_from_sample(sample, r_grid, delta=delta, normalize=normalize, estimator="weighted")


def estimate_F(spec: DriftSpec, r_grid, n_paths: int, grid: Grid, seed: int, refine: bool = True,
               *, normalize: bool = True, workers: int | None = None):
    sample = simulate(spec, grid, n_paths, seed, measure="wiener", refine=refine, workers=workers)
    return F_from_sample(sample, r_grid, normalize=normalize)


def smoothed_density(spec: DriftSpec, r: float, eps: float, n_paths: int, grid: Grid, seed: int,
                     *, refine: bool = True, workers: int | None = None) -> BandEstimate:
    if eps <= 0 or r + eps >= 0:
        raise DomainError("need eps > 0 and r + eps < 0")
    sample = simulate(spec, grid, n_paths, seed, measure="wiener", refine=refine, workers=workers)
    return band_density(sample, r, eps)
