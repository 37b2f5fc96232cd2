"""Batched Monte Carlo over counter-based streams.

:func:`simulate` reduces every path to a handful of summaries (minima,
argmin locations, log-weight, terminal value, and per-direction Malliavin
quantities) and concatenates the per-stream results in stream order. The
result is bit-identical for any worker count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .drift import DriftSpec
from .errors import DomainError
from .girsanov import log_psi_batch
from .paths import (Grid, batch_minima, bridge_uniforms, brownian_increments,
                    euler_maruyama_batch, integrate_brownian)
from .rng import stream_layout, stream_rng

MEASURES = ("wiener", "sde")
WORKERS_ENV = "SDEMIN_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class PathSample:
    """Per-path summaries of one simulation run.

    ``measure == "wiener"``: Brownian paths, ``log_psi`` is the log-density of
    the SDE law. ``measure == "sde"``: Euler-Maruyama paths, ``log_psi`` is 0.
    ``hat[:, j]`` and ``dlogpsi[:, j]`` hold the Wiener integral of
    ``directions[j]`` and the derivative of the (discrete) log Psi along it.
    """

    spec: DriftSpec
    grid: Grid
    seed: int
    measure: str
    refine: bool
    m_grid: np.ndarray
    i_grid: np.ndarray
    m_refined: np.ndarray
    cell: np.ndarray
    log_psi: np.ndarray
    terminal: np.ndarray
    sup_norm: np.ndarray
    directions: tuple = ()
    hat: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    dlogpsi: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_paths(self) -> int:
        return self.m_grid.size

    def minimum(self, refine: bool | None = None) -> np.ndarray:
        refine = self.refine if refine is None else refine
        if refine and not self.refine:
            raise DomainError("sample was simulated without bridge refinement")
        return self.m_refined if refine else self.m_grid

    def tau(self, refine: bool | None = None) -> np.ndarray:
        refine = self.refine if refine is None else refine
        if refine:
            return (self.cell + 0.5) * self.grid.dt
        return self.i_grid * self.grid.dt

    def direction_index(self, h) -> int:
        for j, d in enumerate(self.directions):
            if d is h or (d.grid == h.grid and np.array_equal(d.slopes, h.slopes)):
                return j
        raise DomainError("direction was not recorded in this sample")

    def h_at_tau(self, h, refine: bool | None = None) -> np.ndarray:
        refine = self.refine if refine is None else refine
        vals = h.values
        if refine:
            return 0.5 * (vals[self.cell] + vals[self.cell + 1])
        return vals[self.i_grid]

    def meta(self) -> dict:
        return {"measure": self.measure, "n_paths": self.n_paths, "dt": self.grid.dt,
                "seed": self.seed, "drift": self.spec.describe(), "refine": self.refine}


def _stream_job(args):
    spec, n_steps, seed, sid, count, measure, refine, slopes = args
    grid = Grid(n_steps)
    dt = grid.dt
    rng = stream_rng(seed, sid)
    dB = brownian_increments(rng, count, grid)
    U = bridge_uniforms(rng, count, grid) if refine else None
    if measure == "wiener":
        X = integrate_brownian(dB)
        lp = log_psi_batch(spec, X, dt)
    else:
        X = euler_maruyama_batch(spec, dB, dt)
        lp = np.zeros(count)
    del dB
    mins = batch_minima(X, dt, U)
    del U
    out = {
        "m_grid": mins.m_grid, "i_grid": mins.i_grid, "m_refined": mins.m_refined,
        "cell": mins.cell, "log_psi": lp, "terminal": X[:, -1].copy(),
        "sup_norm": np.max(np.abs(X), axis=1),
    }
    if slopes is not None:
        H = np.cumsum(slopes, axis=1) * dt  # (d, n_steps): h at t_1..t_N
        out["hat"] = np.diff(X, axis=1) @ slopes.T
        if spec.is_zero:
            out["dlogpsi"] = np.zeros((count, slopes.shape[0]))
        else:
            G = spec.b(X) * spec.db(X) + 0.5 * spec.d2b(X)
            # trapezoid of G*h with h(0) = 0
            integral = dt * (G[:, 1:] @ H.T - 0.5 * G[:, -1:] * H[:, -1])
            out["dlogpsi"] = spec.b(X[:, -1:]) * H[:, -1] - integral
    return out


def simulate(spec: DriftSpec, grid: Grid, n_paths: int, seed: int, *, measure: str = "wiener",
             refine: bool = True, workers: int | None = None,
             directions: Sequence = ()) -> PathSample:
    if measure not in MEASURES:
        raise DomainError(f"measure must be one of {MEASURES}")
    workers = default_workers() if workers is None else int(workers)
    directions = tuple(directions)
    for h in directions:
        if h.grid != grid:
            raise DomainError("directions must live on the simulation grid")
    slopes = np.array([h.slopes for h in directions]) if directions else None
    jobs = [(spec, grid.n_steps, seed, sid, count, measure, refine, slopes)
            for sid, count in stream_layout(n_paths)]
    if workers <= 1 or len(jobs) == 1:
        parts = [_stream_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_stream_job, jobs))
    merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    hat = merged.pop("hat", np.zeros((n_paths, 0)))
    dlogpsi = merged.pop("dlogpsi", np.zeros((n_paths, 0)))
    return PathSample(spec=spec, grid=grid, seed=seed, measure=measure, refine=refine,
                      directions=directions, hat=hat, dlogpsi=dlogpsi, **merged)


# ---------------------------------------------------------------- estimators


def batch_ratio(num: np.ndarray, den: np.ndarray | None = None,
                n_batches: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Ratio estimate sum(num)/sum(den) with batch-means delta-method standard errors.

    ``num`` has shape (n,) or (n, k). ``den=None`` means a plain mean.
    Batches are contiguous and non-overlapping.
    """
    num = np.asarray(num, dtype=float)
    squeeze = num.ndim == 1
    if squeeze:
        num = num[:, None]
    n = num.shape[0]
    B = min(n_batches, n)
    edges = np.linspace(0, n, B + 1).astype(int)
    sizes = np.diff(edges)[:, None]
    a = np.add.reduceat(num, edges[:-1], axis=0) / sizes
    if den is None:
        est = num.mean(axis=0)
        resid = a - est
        wbar = 1.0
    else:
        den = np.asarray(den, dtype=float)
        w = np.add.reduceat(den, edges[:-1])[:, None] / sizes
        est = num.sum(axis=0) / den.sum()
        wbar = float(w.mean())
        resid = a - est * w
    se = np.std(resid, axis=0, ddof=1) / math.sqrt(B) / wbar if B > 1 else np.full(est.shape, np.nan)
    if squeeze:
        return est[0], se[0]
    return est, se


def relative_weights(log_psi: np.ndarray) -> np.ndarray:
    """exp(log_psi - max), enough for self-normalised ratios."""
    return np.exp(log_psi - np.max(log_psi))


def effective_sample_size(log_psi: np.ndarray) -> float:
    w = relative_weights(log_psi)
    return float(w.sum() ** 2 / np.sum(w * w))
