"""Change of measure between the SDE law and Wiener measure.

``log_psi`` is the log-density of the SDE law with respect to Wiener measure,
evaluated on a discrete path. ``log_q1_ito`` is the log of the exponential
martingale, built from the driving noise with a left-point (Ito) sum. Along an
SDE path the two add up to zero in the continuum; :func:`check_ito_identity`
measures how fast the discrete residual vanishes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drift import DriftSpec
from .errors import ContractError, NumericError
from .paths import Grid, Path, brownian_increments, coarsen_noise, euler_maruyama_batch
from .rng import stream_rng


def trapezoid(F: np.ndarray, dt: float) -> np.ndarray:
    """Composite trapezoid rule over the last axis of grid values."""
    return dt * (F.sum(axis=-1) - 0.5 * (F[..., 0] + F[..., -1]))


def log_psi_batch(spec: DriftSpec, X: np.ndarray, dt: float) -> np.ndarray:
    if spec.is_zero:
        return np.zeros(X.shape[0])
    b = spec.b(X)
    return spec.v(X[:, -1]) - 0.5 * trapezoid(b * b, dt) - 0.5 * trapezoid(spec.db(X), dt)


def log_q1_ito_batch(spec: DriftSpec, X: np.ndarray, dB: np.ndarray, dt: float) -> np.ndarray:
    if spec.is_zero:
        return np.zeros(X.shape[0])
    b = spec.b(X)
    return -0.5 * trapezoid(b * b, dt) - np.sum(b[:, :-1] * dB, axis=1)


def log_psi(spec: DriftSpec, path: Path) -> float:
    return float(log_psi_batch(spec, path.values[None, :], path.grid.dt)[0])


def log_q1_closed(spec: DriftSpec, path: Path) -> float:
    return -log_psi(spec, path)


def log_q1_ito(spec: DriftSpec, path: Path) -> float:
    if path.noise is None:
        raise ContractError("log_q1_ito needs the driving noise of the path")
    return float(log_q1_ito_batch(spec, path.values[None, :], path.noise[None, :], path.grid.dt)[0])


def psi_bound_log(spec: DriftSpec, sup_norm):
    """log of C1 exp(C2 ||x||_inf) with C1 = exp(sup|b'|/2), C2 = sup|b|."""
    bd = spec.bounds
    return 0.5 * bd.db + bd.b * np.asarray(sup_norm)


@dataclass
class ConvergenceReport:
    dts: list[float]
    rms: list[float]
    threshold: float
    passed: bool
    failures: list[str] = field(default_factory=list)

    def rows(self):
        return [(dt, r) for dt, r in zip(self.dts, self.rms)]


# RMS values below this are float round-off and exempt from the monotonicity test
RMS_FLOOR = 1e-12


def check_ito_identity(spec: DriftSpec, n_paths: int, grids: list[Grid], seed: int,
                 chunk: int = 512) -> ConvergenceReport:
    """RMS over SDE paths of ``log_q1_ito + log_psi`` on nested grids.

    Noise is drawn on the finest grid and summed onto coarser ones, so each
    grid discretizes the same Brownian paths.
    """
    grids = sorted(grids, key=lambda g: g.n_steps)
    for coarse, fine in zip(grids, grids[1:]):
        if fine.refines(coarse) < 2:
            raise ContractError("grids must be nested, each refining the previous by a factor >= 2")
    finest = grids[-1]
    sq = np.zeros(len(grids))
    done = 0
    sid = 0
    while done < n_paths:
        count = min(chunk, n_paths - done)
        dB_fine = brownian_increments(stream_rng(seed, sid), count, finest)
        for k, g in enumerate(grids):
            dB = coarsen_noise(dB_fine, finest.n_steps // g.n_steps)
            X = euler_maruyama_batch(spec, dB, g.dt)
            res = log_q1_ito_batch(spec, X, dB, g.dt) + log_psi_batch(spec, X, g.dt)
            sq[k] += np.sum(res * res)
        done += count
        sid += 1
    rms = np.sqrt(sq / n_paths)
    bd = spec.bounds
    threshold = 0.01 * (1.0 + bd.b * bd.db)
    failures = []
    for k in range(1, len(grids)):
        if rms[k] > rms[k - 1] and rms[k] > RMS_FLOOR:
            failures.append(f"RMS rose from {rms[k-1]:.3e} to {rms[k]:.3e} at dt={grids[k].dt:g}")
    if rms[-1] >= threshold:
        failures.append(f"final RMS {rms[-1]:.3e} not below {threshold:.3e}")
    return ConvergenceReport([g.dt for g in grids], [float(r) for r in rms], threshold,
                             not failures, failures)


def shifted_mean(log_w: np.ndarray, n_batches: int = 100) -> tuple[float, float]:
    """Mean of exp(log_w) and its batch-means standard error, computed max-shifted."""
    shift = float(np.max(log_w))
    w = np.exp(log_w - shift)
    mean = float(np.mean(w))
    batches = np.array_split(w, min(n_batches, w.size))
    bm = np.array([b.mean() for b in batches])
    se = float(np.std(bm, ddof=1) / math.sqrt(bm.size)) if bm.size > 1 else float("nan")
    try:
        scale = math.exp(shift)
    except OverflowError:
        raise NumericError(f"weight mean overflows (max log-weight {shift:.1f})") from None
    return mean * scale, se * scale


def weight_normalization(spec: DriftSpec, n_paths: int, grid: Grid, seed: int,
                         workers: int = 1) -> tuple[float, float]:
    """Monte Carlo mean of Psi over Brownian paths (1 in the continuum)."""
    from .engine import simulate

    sample = simulate(spec, grid, n_paths, seed, measure="wiener", refine=False, workers=workers)
    return shifted_mean(sample.log_psi)
