"""Brownian and SDE paths on a uniform grid of [0, 1].

Single-path functions (:func:`sample_brownian`, :func:`euler_maruyama`,
:func:`path_min`) are thin wrappers over the batch kernels used by the
Monte Carlo engine, so both routes consume random numbers identically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .drift import DriftSpec
from .errors import DomainError


@dataclass(frozen=True)
class Grid:
    n_steps: int

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def refines(self, coarse: "Grid") -> int:
        """Return the refinement factor over ``coarse`` (0 if not nested)."""
        q, r = divmod(self.n_steps, coarse.n_steps)
        return q if r == 0 else 0


@dataclass
class Path:
    grid: Grid
    values: np.ndarray
    noise: np.ndarray | None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_steps + 1,):
            raise DomainError("path values must have n_steps + 1 entries")
        if self.values[0] != 0.0:
            raise DomainError("paths start at 0")
        if self.noise is not None:
            self.noise = np.asarray(self.noise, dtype=float)
            if self.noise.shape != (self.grid.n_steps,):
                raise DomainError("path noise must have n_steps entries")

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class MinRecord:
    m: float
    tau: float
    refined: bool
    index: int  # grid index (grid-only) or cell index (refined)


# ---------------------------------------------------------------- batch kernels


def brownian_increments(rng: np.random.Generator, n_paths: int, grid: Grid) -> np.ndarray:
    dB = rng.standard_normal((n_paths, grid.n_steps))
    dB *= math.sqrt(grid.dt)
    return dB


def bridge_uniforms(rng: np.random.Generator, n_paths: int, grid: Grid) -> np.ndarray:
    # (0, 1] so that log U is finite
    U = rng.random((n_paths, grid.n_steps))
    np.subtract(1.0, U, out=U)
    return U


def integrate_brownian(dB: np.ndarray) -> np.ndarray:
    X = np.zeros((dB.shape[0], dB.shape[1] + 1))
    np.cumsum(dB, axis=1, out=X[:, 1:])
    return X


def euler_maruyama_batch(spec: DriftSpec, dB: np.ndarray, dt: float) -> np.ndarray:
    """x_{i+1} = x_i + b(x_i) dt + dB_i for every row of ``dB``."""
    if spec.is_zero:
        return integrate_brownian(dB)
    n_paths, n_steps = dB.shape
    X = np.empty((n_steps + 1, n_paths))
    X[0] = 0.0
    dBt = np.ascontiguousarray(dB.T)
    x = X[0]
    for i in range(n_steps):
        x = x + spec.b(x) * dt + dBt[i]
        X[i + 1] = x
    return np.ascontiguousarray(X.T)


def bridge_min_from_uniform(a, b, dt: float, u):
    """Inverse-CDF draw of the minimum of a Brownian bridge from ``a`` to ``b`` over time ``dt``.

    P(m <= r | a, b) = exp(-2 (r - a)(r - b) / dt) for r <= min(a, b).
    """
    if dt <= 0:
        raise DomainError("bridge duration must be positive")
    d = a - b
    return 0.5 * (a + b - np.sqrt(d * d - 2.0 * dt * np.log(u)))


def bridge_min_sample(a: float, b: float, dt: float, rng: np.random.Generator) -> float:
    if dt <= 0:
        raise DomainError("bridge duration must be positive")
    u = 1.0 - rng.random()
    return float(bridge_min_from_uniform(a, b, dt, u))


@dataclass
class BatchMinima:
    m_grid: np.ndarray
    i_grid: np.ndarray
    m_refined: np.ndarray
    cell: np.ndarray


def batch_minima(X: np.ndarray, dt: float, U: np.ndarray | None) -> BatchMinima:
    """Grid minima and (when ``U`` is given) bridge-refined minima of every row."""
    i_grid = np.argmin(X, axis=1)
    rows = np.arange(X.shape[0])
    m_grid = X[rows, i_grid]
    if U is None:
        return BatchMinima(m_grid, i_grid, m_grid.copy(), np.minimum(i_grid, X.shape[1] - 2))
    a, b = X[:, :-1], X[:, 1:]
    lo = np.minimum(a, b)
    # A cell minimum is >= min(a, b) - sqrt(dt * E / 2) with E = -log U <= -log(2^-53).
    # Cells above the grid minimum by more than that cannot hold the global minimum.
    reach = math.sqrt(dt * 0.5 * 53.0 * math.log(2.0)) * (1 + 1e-9) + 1e-12
    cand = lo <= (m_grid + reach)[:, None]
    cells = np.full(a.shape, np.inf)
    cells[cand] = bridge_min_from_uniform(a[cand], b[cand], dt, U[cand])
    cell = np.argmin(cells, axis=1)
    return BatchMinima(m_grid, i_grid, cells[rows, cell], cell)


# ---------------------------------------------------------------- single paths


def sample_brownian(grid: Grid, rng: np.random.Generator) -> Path:
    dB = brownian_increments(rng, 1, grid)
    return Path(grid, integrate_brownian(dB)[0], dB[0])


def euler_maruyama(spec: DriftSpec, grid: Grid, rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None) -> Path:
    """Euler-Maruyama path of dx = b(x) dt + dB, x(0) = 0.

    Pass ``noise`` to drive the scheme with given increments instead of
    drawing them from ``rng``.
    """
    if noise is None:
        if rng is None:
            raise DomainError("euler_maruyama needs an rng or explicit noise")
        dB = brownian_increments(rng, 1, grid)
    else:
        dB = np.asarray(noise, dtype=float).reshape(1, grid.n_steps)
    return Path(grid, euler_maruyama_batch(spec, dB, grid.dt)[0], dB[0])


def path_min(path: Path, rng: np.random.Generator | None = None, refine: bool = True) -> MinRecord:
    """Minimum over [0, 1] and its location.

    ``refine=False`` returns the grid minimum at its first argmin.
    ``refine=True`` draws one bridge minimum per cell and reports the cell
    midpoint as the argmin time.
    """
    X = path.values[None, :]
    dt = path.grid.dt
    if not refine:
        mins = batch_minima(X, dt, None)
        i = int(mins.i_grid[0])
        return MinRecord(float(mins.m_grid[0]), i * dt, False, i)
    if rng is None:
        raise DomainError("refined minimum needs an rng")
    mins = batch_minima(X, dt, bridge_uniforms(rng, 1, path.grid))
    c = int(mins.cell[0])
    return MinRecord(float(mins.m_refined[0]), (c + 0.5) * dt, True, c)


def coarsen_noise(dB: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments (last axis)."""
    if factor < 1 or dB.shape[-1] % factor:
        raise DomainError("coarsening factor must divide the number of steps")
    return dB.reshape(*dB.shape[:-1], dB.shape[-1] // factor, factor).sum(axis=-1)


def write_paths_csv(target, paths: list[Path]) -> None:
    """Write ``path, t, x, dB`` rows; ``dB`` is blank at t = 1."""
    with open(FsPath(target), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t", "x", "dB"])
        for k, p in enumerate(paths):
            t = p.grid.times
            for i in range(p.grid.n_steps + 1):
                dB = "" if p.noise is None or i == p.grid.n_steps else repr(float(p.noise[i]))
                w.writerow([k, repr(float(t[i])), repr(float(p.values[i])), dB])
