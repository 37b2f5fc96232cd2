"""Cameron-Martin calculus on discrete paths.

Directions h live in H = {h in H^1(0,1): h(0) = 0} and are stored as
piecewise-linear functions on the simulation grid. Everything is written in
the H-formulation: vector fields take values in H, pairings are
<h, k>_H = int h' k', and the Wiener integral of h is sum_i h'_i (x_{i+1} - x_i).

For the minimum functional g(x) = min x, the H-derivative along h is h(tau_x).
For the SDE law nu = Psi * Wiener, a cylindrical field
F(x) = sum_i phi_i(k_i^(x)) h_i has divergence

    div_nu F = sum_i [phi_i'(k_i^) <k_i, h_i>_H - phi_i(k_i^) h_i^
                      + phi_i(k_i^) <grad_H log Psi, h_i>_H]

so that  int <grad_H u, F>_H dnu = - int u div_nu F dnu.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .drift import DriftSpec
from .engine import PathSample, batch_ratio, relative_weights, simulate
from .errors import ContractError, DomainError
from .girsanov import log_psi_batch, trapezoid
from .minlaw import band_density
from .paths import (Grid, MinRecord, Path, batch_minima, bridge_min_from_uniform, bridge_uniforms,
                    brownian_increments, euler_maruyama_batch)
from .rng import stream_rng


@dataclass(frozen=True, eq=False)
class CMVector:
    grid: Grid
    slopes: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.slopes, dtype=float)
        if s.shape != (self.grid.n_steps,):
            raise DomainError("one slope per grid cell is required")
        object.__setattr__(self, "slopes", s)

    @classmethod
    def from_function(cls, f: Callable, grid: Grid) -> "CMVector":
        """Piecewise-linear interpolant of ``f`` on ``grid``; needs f(0) = 0."""
        vals = np.asarray(f(grid.times), dtype=float)
        if abs(vals[0]) > 1e-14:
            raise DomainError("Cameron-Martin directions vanish at t = 0")
        return cls(grid, np.diff(vals) / grid.dt)

    @property
    def values(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.slopes) * self.grid.dt))

    @property
    def norm_H(self) -> float:
        return math.sqrt(float(np.sum(self.slopes ** 2)) * self.grid.dt)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def inner(self, other: "CMVector") -> float:
        if other.grid != self.grid:
            raise ContractError("directions live on different grids")
        return float(np.sum(self.slopes * other.slopes)) * self.grid.dt

    def at(self, t):
        return np.interp(t, self.grid.times, self.values)

    def scaled(self, c: float) -> "CMVector":
        return CMVector(self.grid, c * self.slopes)

    def resample(self, grid: Grid) -> "CMVector":
        return CMVector.from_function(self.at, grid)


# ---------------------------------------------------------------- profiles and fields


@dataclass(frozen=True)
class Profile:
    """Scalar profile phi with analytic derivative.

    kinds: ``constant`` (c), ``affine`` (slope, intercept, lo, hi: clamped to
    [lo, hi]), ``tanh`` (amplitude, scale: amplitude * tanh(t / scale)).
    """

    kind: str
    params: tuple = ()

    @classmethod
    def constant(cls, c: float = 1.0):
        return cls("constant", (float(c),))

    @classmethod
    def affine(cls, slope: float = 1.0, intercept: float = 0.0, lo: float = -math.inf,
               hi: float = math.inf):
        return cls("affine", (float(slope), float(intercept), float(lo), float(hi)))

    @classmethod
    def tanh(cls, amplitude: float = 1.0, scale: float = 1.0):
        return cls("tanh", (float(amplitude), float(scale)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.params[0])
        if self.kind == "affine":
            s, c, lo, hi = self.params
            return np.clip(s * t + c, lo, hi)
        if self.kind == "tanh":
            a, sc = self.params
            return a * np.tanh(t / sc)
        raise DomainError(f"unknown profile kind {self.kind!r}")

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(t)
        if self.kind == "affine":
            s, c, lo, hi = self.params
            u = s * t + c
            return np.where((u > lo) & (u < hi), s, 0.0)
        if self.kind == "tanh":
            a, sc = self.params
            th = np.tanh(t / sc)
            return a / sc * (1.0 - th * th)
        raise DomainError(f"unknown profile kind {self.kind!r}")

    def scaled(self, c: float) -> "Profile":
        c = float(c)
        if self.kind == "constant":
            return Profile.constant(c * self.params[0])
        if self.kind == "affine":
            s, b, lo, hi = self.params
            lo, hi = sorted((c * lo, c * hi))
            return Profile.affine(c * s, c * b, lo, hi)
        if self.kind == "tanh":
            a, sc = self.params
            return Profile.tanh(c * a, sc)
        raise DomainError(f"unknown profile kind {self.kind!r}")

    @property
    def sup(self) -> float:
        if self.kind == "constant":
            return abs(self.params[0])
        if self.kind == "affine":
            s, c, lo, hi = self.params
            if s == 0:
                return abs(min(max(c, lo), hi))
            return max(abs(lo), abs(hi))
        return abs(self.params[0])


@dataclass(frozen=True)
class FieldTerm:
    profile: Profile
    k: CMVector
    h: CMVector


@dataclass(frozen=True)
class CylindricalField:
    terms: tuple
    name: str = "field"

    @classmethod
    def constant(cls, h: CMVector, c: float = 1.0, name: str = "constant"):
        return cls((FieldTerm(Profile.constant(c), h, h),), name)

    def scaled(self, c: float) -> "CylindricalField":
        # scale the profiles so the field keeps its directions
        return CylindricalField(tuple(FieldTerm(t.profile.scaled(c), t.k, t.h) for t in self.terms),
                                f"{self.name}*{c:g}")

    @property
    def budget(self) -> float:
        """sum_i sup|phi_i| ||h_i||_H, an upper bound for sup_x ||F(x)||_H."""
        return sum(t.profile.sup * t.h.norm_H for t in self.terms)

    def directions(self) -> list[CMVector]:
        out: list[CMVector] = []
        for t in self.terms:
            for d in (t.k, t.h):
                if not any(d is e for e in out):
                    out.append(d)
        return out


def field_directions(fields: Sequence[CylindricalField]) -> list[CMVector]:
    out: list[CMVector] = []
    for f in fields:
        for d in f.directions():
            if not any(d is e for e in out):
                out.append(d)
    return out


# ---------------------------------------------------------------- single-path operations


def _on_grid(h: CMVector, path: Path, resample: bool) -> CMVector:
    if h.grid == path.grid:
        return h
    if not resample:
        raise ContractError("direction and path use different grids")
    return h.resample(path.grid)


def paley_wiener(h: CMVector, path: Path, resample: bool = False) -> float:
    h = _on_grid(h, path, resample)
    return float(np.dot(h.slopes, np.diff(path.values)))


def grad_g_pairing(path: Path, min_rec: MinRecord, h: CMVector) -> float:
    """<grad_H min, h>_H = h(tau_x)."""
    return float(h.at(min_rec.tau))


def grad_log_psi_pairing(spec: DriftSpec, path: Path, h: CMVector, resample: bool = False) -> float:
    """Derivative of the discrete log Psi at ``path`` along ``h``."""
    h = _on_grid(h, path, resample)
    x = path.values
    hv = h.values
    G = spec.b(x) * spec.db(x) + 0.5 * spec.d2b(x)
    return float(spec.b(x[-1]) * hv[-1] - trapezoid(G * hv, path.grid.dt))


def field_value_pairing(field_: CylindricalField, path: Path, min_rec: MinRecord) -> float:
    """<grad_H g, F(x)>_H = sum_i phi_i(k_i^(x)) h_i(tau_x)."""
    return float(sum(t.profile(paley_wiener(t.k, path)) * t.h.at(min_rec.tau) for t in field_.terms))


def divergence_nu(field_: CylindricalField, spec: DriftSpec, path: Path) -> float:
    total = 0.0
    for t in field_.terms:
        kx = paley_wiener(t.k, path)
        phi = float(t.profile(kx))
        total += float(t.profile.deriv(kx)) * t.k.inner(t.h)
        total -= phi * paley_wiener(t.h, path)
        total += phi * grad_log_psi_pairing(spec, path, t.h)
    return total


# ---------------------------------------------------------------- batch operations


def field_pairing_batch(field_: CylindricalField, sample: PathSample,
                        refine: bool | None = None) -> np.ndarray:
    out = np.zeros(sample.n_paths)
    for t in field_.terms:
        kx = sample.hat[:, sample.direction_index(t.k)]
        out += t.profile(kx) * sample.h_at_tau(t.h, refine)
    return out


def divergence_batch(field_: CylindricalField, sample: PathSample) -> np.ndarray:
    out = np.zeros(sample.n_paths)
    for t in field_.terms:
        kx = sample.hat[:, sample.direction_index(t.k)]
        j = sample.direction_index(t.h)
        phi = t.profile(kx)
        out += t.profile.deriv(kx) * t.k.inner(t.h) - phi * sample.hat[:, j] + phi * sample.dlogpsi[:, j]
    return out


def theta(m, r: float, eps: float):
    """Ramp from 0 at r to 1 at r + eps, approximating 1{m >= r}."""
    return np.clip((np.asarray(m, dtype=float) - r) / eps, 0.0, 1.0)


def theta_prime(m, r: float, eps: float):
    m = np.asarray(m, dtype=float)
    return np.where((m >= r) & (m <= r + eps), 1.0 / eps, 0.0)


def _weighted(sample: PathSample, cols: np.ndarray, normalize: bool = True):
    if normalize:
        w = relative_weights(sample.log_psi)
        return batch_ratio(w[:, None] * cols, w)
    shift = float(np.max(sample.log_psi))
    w = np.exp(sample.log_psi - shift)
    est, se = batch_ratio(w[:, None] * cols)
    return est * math.exp(shift), se * math.exp(shift)


@dataclass
class IBPResult:
    lhs: float
    rhs: float
    residual: float
    stderr: float
    lhs_stderr: float
    rhs_stderr: float
    hits: int
    degenerate: bool
    field_id: str


def ibp_from_sample(sample: PathSample, field_: CylindricalField, r: float, eps: float,
                    refine: bool | None = None) -> IBPResult:
    """Both sides of  int <grad_H(theta_eps o g), F>_H dnu = - int (theta_eps o g) div_nu F dnu."""
    if eps <= 0 or r + eps >= 0:
        raise DomainError("need eps > 0 and r + eps < 0")
    m = sample.minimum(refine)
    band = ((m >= r) & (m <= r + eps)).astype(float)
    pair = field_pairing_batch(field_, sample, refine)
    div = divergence_batch(field_, sample)
    L = band * pair / eps
    R = -theta(m, r, eps) * div
    est, se = _weighted(sample, np.column_stack([L, R, L - R]))
    hits = int(band.sum())
    return IBPResult(float(est[0]), float(est[1]), float(est[2]), float(se[2]), float(se[0]),
                     float(se[1]), hits, hits == 0, field_.name)


def ibp_residual(spec: DriftSpec, field_: CylindricalField, r: float, eps: float, n_paths: int,
                 grid: Grid, seed: int, *, workers: int | None = None) -> IBPResult:
    sample = simulate(spec, grid, n_paths, seed, measure="wiener", refine=True, workers=workers,
                      directions=field_.directions())
    return ibp_from_sample(sample, field_, r, eps)


@dataclass
class PerimeterRow:
    field_id: str
    value: float
    stderr: float
    ok: bool


@dataclass
class PerimeterReport:
    r: float
    bound: float
    bound_stderr: float
    rows: list[PerimeterRow]
    max_abs_value: float
    max_sqrt_tau: float
    passed: bool
    failures: list[str] = field(default_factory=list)


def perimeter_from_sample(sample: PathSample, r: float, fields: Sequence[CylindricalField],
                          eps: float = 0.02, refine: bool | None = None) -> PerimeterReport:
    """Check |int_{m > r} div_nu F dnu| <= l(r) for unit-budget fields.

    ``l(r)`` is the band estimate (1/eps) nu(r <= m <= r + eps).
    """
    if r >= 0:
        raise DomainError("r must be negative")
    for f in fields:
        if f.budget > 1.0 + 1e-9:
            raise ContractError(f"field {f.name!r} exceeds the unit budget ({f.budget:.6g})")
    band = band_density(sample, r, eps, refine=refine)
    m = sample.minimum(refine)
    inside = (m > r).astype(float)
    rows = []
    failures = []
    if fields:
        cols = np.column_stack([inside * divergence_batch(f, sample) for f in fields])
        est, se = _weighted(sample, cols)
        for f, v, s in zip(fields, est, se):
            tol = 3.0 * math.hypot(s, band.stderr)
            ok = abs(v) <= band.value + tol
            rows.append(PerimeterRow(f.name, float(v), float(s), bool(ok)))
            if not ok:
                failures.append(f"{f.name}: |{v:.5g}| > {band.value:.5g} + {tol:.3g}")
    max_sqrt_tau = float(np.sqrt(np.max(sample.tau(refine))))
    if max_sqrt_tau > 1.0:
        failures.append("||1_[0,tau]||_L2 exceeded 1")
    return PerimeterReport(r, band.value, band.stderr, rows,
                           max((abs(x.value) for x in rows), default=0.0), max_sqrt_tau,
                           not failures, failures)


def perimeter_bound_check(spec: DriftSpec, r: float, fields: Sequence[CylindricalField], n_paths: int,
                          grid: Grid, seed: int, *, eps: float = 0.02,
                          workers: int | None = None) -> PerimeterReport:
    sample = simulate(spec, grid, n_paths, seed, measure="wiener", refine=True, workers=workers,
                      directions=field_directions(fields))
    return perimeter_from_sample(sample, r, fields, eps)


# ---------------------------------------------------------------- derivative checks


@dataclass
class GradientCheck:
    errors: np.ndarray  # |fd - h(tau)| on guarded paths
    n_guarded: int
    n_excluded: int

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors)) if self.errors.size else float("nan")


def min_derivative_batch(X: np.ndarray, U: np.ndarray | None, h: CMVector, eps: float):
    """Finite-difference derivative of min along h, h(tau) and the near-tie gap, per row."""
    dt = h.grid.dt
    hv = h.values
    base = batch_minima(X, dt, U)
    shifted = batch_minima(X + eps * hv, dt, U)
    refine = U is not None
    m0 = base.m_refined if refine else base.m_grid
    m1 = shifted.m_refined if refine else shifted.m_grid
    if refine:
        h_tau = 0.5 * (hv[base.cell] + hv[base.cell + 1])
        a, b = X[:, :-1], X[:, 1:]
        cells = bridge_min_from_uniform(a, b, dt, U)
        two = np.partition(cells, 1, axis=1)[:, :2]
    else:
        h_tau = hv[base.i_grid]
        two = np.partition(X, 1, axis=1)[:, :2]
    gap = two[:, 1] - two[:, 0]
    return (m1 - m0) / eps, h_tau, gap


def min_derivative_check(spec: DriftSpec, grid: Grid, h: CMVector, n_guarded: int, seed: int,
                         eps: float = 1e-4, refine: bool = True, chunk: int = 512) -> GradientCheck:
    """Compare (min(x + eps h) - min(x)) / eps with h(tau_x) on SDE paths.

    Paths whose two smallest cell minima are within 10 eps ||h||_inf are
    excluded; sampling continues until ``n_guarded`` paths are collected.
    """
    guard = 10.0 * eps * h.sup_norm
    errs = []
    excluded = 0
    sid = 0
    while sum(e.size for e in errs) < n_guarded:
        rng = stream_rng(seed, sid)
        dB = brownian_increments(rng, chunk, grid)
        U = bridge_uniforms(rng, chunk, grid) if refine else None
        X = euler_maruyama_batch(spec, dB, grid.dt)
        fd, h_tau, gap = min_derivative_batch(X, U, h, eps)
        ok = gap > guard
        excluded += int(np.count_nonzero(~ok))
        errs.append(np.abs(fd - h_tau)[ok])
        sid += 1
    errors = np.concatenate(errs)[:n_guarded]
    return GradientCheck(errors, errors.size, excluded)


def log_psi_derivative_fd(spec: DriftSpec, path: Path, h: CMVector, eps: float = 1e-5) -> float:
    x = path.values[None, :]
    dt = path.grid.dt
    return float((log_psi_batch(spec, x + eps * h.values, dt)[0] - log_psi_batch(spec, x, dt)[0]) / eps)


# ---------------------------------------------------------------- reports


def write_ibp_csv(target, results: Sequence[IBPResult]) -> None:
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lhs", "rhs", "residual", "stderr", "field_id"])
        for res in results:
            w.writerow([repr(res.lhs), repr(res.rhs), repr(res.residual), repr(res.stderr), res.field_id])


def write_perimeter_csv(target, report: PerimeterReport) -> None:
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["field_id", "value", "stderr", "bound", "bound_stderr", "ok"])
        for row in report.rows:
            w.writerow([row.field_id, repr(row.value), repr(row.stderr), repr(report.bound),
                        repr(report.bound_stderr), int(row.ok)])


def standard_fields(grid: Grid) -> list[CylindricalField]:
    """Five unit-budget fields used by the perimeter command."""
    s = CMVector.from_function(lambda t: t, grid)
    sn = CMVector.from_function(lambda t: np.sin(np.pi * t / 2), grid)
    sn = sn.scaled(1.0 / sn.norm_H)
    bump = CMVector.from_function(lambda t: np.minimum(t, 0.5), grid)
    bump = bump.scaled(1.0 / bump.norm_H)
    return [
        CylindricalField.constant(s, 1.0, "const_s"),
        CylindricalField.constant(sn, -1.0, "const_sin"),
        CylindricalField((FieldTerm(Profile.tanh(1.0, 1.0), s, s),), "tanh_s"),
        CylindricalField((FieldTerm(Profile.affine(1.0, 0.0, -1.0, 1.0), bump, sn),), "clamp_bump_sin"),
        CylindricalField((FieldTerm(Profile.constant(0.5), s, s),
                          FieldTerm(Profile.tanh(0.5, 0.5), sn, bump)), "two_term"),
    ]
