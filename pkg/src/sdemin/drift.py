"""Drift functions b in C^2_b with analytic derivatives and potential.

The potential is ``v(eta) = int_0^eta b(r) dr``. Every built-in family has a
closed form for ``v``; the tabulated family integrates its cubic spline
exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError

# sup |d^2/dx^2 tanh(x)| = 4 / (3 sqrt 3), attained at x = atanh(1/sqrt 3)
_TANH_D2_SUP = 4.0 / (3.0 * math.sqrt(3.0))


@dataclass(frozen=True)
class Bounds:
    b: float
    db: float
    d2b: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.b, self.db, self.d2b)


class DriftSpec:
    """Base class. Subclasses implement vectorised ``b``, ``db``, ``d2b`` and ``v``."""

    family: ClassVar[str] = ""

    def b(self, x):
        raise NotImplementedError

    def db(self, x):
        raise NotImplementedError

    def d2b(self, x):
        raise NotImplementedError

    def v(self, x):
        raise NotImplementedError

    @property
    def bounds(self) -> Bounds:
        raise NotImplementedError

    @property
    def params(self) -> dict[str, float]:
        return {}

    def describe(self) -> dict:
        return {"family": self.family, "params": self.params, "bounds": list(self.bounds.as_tuple())}

    @property
    def is_zero(self) -> bool:
        return False


@dataclass(frozen=True)
class Zero(DriftSpec):
    family: ClassVar[str] = "zero"

    def b(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    db = d2b = v = b

    @property
    def bounds(self) -> Bounds:
        return Bounds(0.0, 0.0, 0.0)

    @property
    def is_zero(self) -> bool:
        return True


@dataclass(frozen=True)
class Constant(DriftSpec):
    c: float
    family: ClassVar[str] = "constant"

    def b(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.c)

    def db(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    d2b = db

    def v(self, x):
        return self.c * np.asarray(x, dtype=float)

    @property
    def bounds(self) -> Bounds:
        return Bounds(abs(self.c), 0.0, 0.0)

    @property
    def params(self):
        return {"c": self.c}


@dataclass(frozen=True)
class Tanh(DriftSpec):
    """``b(x) = scale * tanh(x)``."""

    scale: float = 1.0
    family: ClassVar[str] = "tanh"

    def b(self, x):
        return self.scale * np.tanh(x)

    def db(self, x):
        t = np.tanh(x)
        return self.scale * (1.0 - t * t)

    def d2b(self, x):
        t = np.tanh(x)
        return -2.0 * self.scale * t * (1.0 - t * t)

    def v(self, x):
        # log cosh x = |x| + log1p(exp(-2|x|)) - log 2, overflow-free
        a = np.abs(np.asarray(x, dtype=float))
        return self.scale * (a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0))

    @property
    def bounds(self) -> Bounds:
        s = abs(self.scale)
        return Bounds(s, s, s * _TANH_D2_SUP)

    @property
    def params(self):
        return {"scale": self.scale}


@dataclass(frozen=True)
class Sine(DriftSpec):
    """``b(x) = amplitude * sin(frequency * x)``, frequency in radians per unit."""

    amplitude: float
    frequency: float
    family: ClassVar[str] = "sine"

    def __post_init__(self):
        if self.frequency == 0.0:
            raise DomainError("sine drift needs a nonzero frequency")

    def b(self, x):
        return self.amplitude * np.sin(self.frequency * np.asarray(x, dtype=float))

    def db(self, x):
        return self.amplitude * self.frequency * np.cos(self.frequency * np.asarray(x, dtype=float))

    def d2b(self, x):
        w = self.frequency
        return -self.amplitude * w * w * np.sin(w * np.asarray(x, dtype=float))

    def v(self, x):
        w = self.frequency
        # 1 - cos(wx) = 2 sin^2(wx/2) avoids cancellation near 0
        s = np.sin(0.5 * w * np.asarray(x, dtype=float))
        return self.amplitude * 2.0 * s * s / w

    @property
    def bounds(self) -> Bounds:
        a, w = abs(self.amplitude), abs(self.frequency)
        return Bounds(a, a * w, a * w * w)

    @property
    def params(self):
        return {"amplitude": self.amplitude, "frequency": self.frequency}


@dataclass(frozen=True, eq=False)
class Custom(DriftSpec):
    """Drift tabulated on ``knots`` and interpolated by a cubic spline.

    The declared bounds are taken on trust here and checked by
    :func:`validate_spec`. Queries outside ``[knots[0], knots[-1]]`` raise
    :class:`DomainError`. The potential is anchored at 0, so 0 must lie in the
    tabulated range.
    """

    knots: np.ndarray
    values: np.ndarray
    declared: Bounds
    family: ClassVar[str] = "custom"
    _spline: CubicSpline = field(init=False, repr=False)
    _anti: object = field(init=False, repr=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 4:
            raise DomainError("custom drift needs matching 1-D knots/values with at least 4 points")
        if np.any(np.diff(knots) <= 0):
            raise DomainError("custom drift knots must be strictly increasing")
        if not knots[0] <= 0.0 <= knots[-1]:
            raise DomainError("custom drift table must contain 0")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        spline = CubicSpline(knots, values)
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_anti", spline.antiderivative())

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        if np.any(x < lo) or np.any(x > hi) or np.any(np.isnan(x)):
            bad = x[(x < lo) | (x > hi) | np.isnan(x)].ravel()[0]
            raise DomainError(f"custom drift queried at {bad!r}, outside tabulated range [{lo}, {hi}]")
        return x

    def b(self, x):
        return self._spline(self._check(x))

    def db(self, x):
        return self._spline(self._check(x), 1)

    def d2b(self, x):
        return self._spline(self._check(x), 2)

    def v(self, x):
        x = self._check(x)
        return self._anti(x) - self._anti(0.0)

    @property
    def bounds(self) -> Bounds:
        return self.declared

    @property
    def params(self):
        return {"n_knots": int(self.knots.size), "range": [float(self.knots[0]), float(self.knots[-1])]}

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])


def drift_triple(spec: DriftSpec, eta: float) -> tuple[float, float, float]:
    return float(spec.b(eta)), float(spec.db(eta)), float(spec.d2b(eta))


def potential(spec: DriftSpec, eta: float) -> float:
    return float(spec.v(eta))


@dataclass
class ValidationReport:
    passed: bool
    residual_db: float
    residual_d2b: float
    where_db: float
    where_d2b: float
    observed: Bounds
    declared: Bounds
    failures: list[str]


def validate_spec(
    spec: DriftSpec,
    *,
    lo: float = -10.0,
    hi: float = 10.0,
    n_points: int = 20001,
    delta: float = 1e-6,
    tol: float = 1e-6,
) -> ValidationReport:
    """Scan a dense grid for derivative consistency and declared bounds.

    Residuals compare ``b'`` (resp. ``b''``) with central differences of
    ``b`` (resp. ``b'``) at step ``delta``. A cubic-spline table has a
    jump in b''' at every knot, which costs O(delta) in the b'' residual;
    the small default step keeps a clean table well inside ``tol`` while a
    corrupted value still shows up as a large, localised residual.
    """
    if isinstance(spec, Custom):
        klo, khi = spec.domain
        lo, hi = max(lo, klo + delta), min(hi, khi - delta)
    eta = np.linspace(lo, hi, n_points)
    b, db, d2b = spec.b(eta), spec.db(eta), spec.d2b(eta)
    fd_b = (spec.b(eta + delta) - spec.b(eta - delta)) / (2 * delta)
    fd_db = (spec.db(eta + delta) - spec.db(eta - delta)) / (2 * delta)
    r1 = np.abs(db - fd_b)
    r2 = np.abs(d2b - fd_db)
    i1, i2 = int(np.argmax(r1)), int(np.argmax(r2))
    observed = Bounds(float(np.max(np.abs(b))), float(np.max(np.abs(db))), float(np.max(np.abs(d2b))))
    declared = spec.bounds
    failures = []
    if r1[i1] >= tol:
        failures.append(f"b' residual {r1[i1]:.3e} at eta={eta[i1]:.6g}")
    if r2[i2] >= tol:
        failures.append(f"b'' residual {r2[i2]:.3e} at eta={eta[i2]:.6g}")
    for name, o, d in zip(("sup|b|", "sup|b'|", "sup|b''|"), observed.as_tuple(), declared.as_tuple()):
        if o > d * (1 + 1e-12) + 1e-15:
            failures.append(f"{name} observed {o:.6g} exceeds declared {d:.6g}")
    return ValidationReport(
        passed=not failures,
        residual_db=float(r1[i1]),
        residual_d2b=float(r2[i2]),
        where_db=float(eta[i1]),
        where_d2b=float(eta[i2]),
        observed=observed,
        declared=declared,
        failures=failures,
    )


def from_config(family: str, params: dict[str, float]) -> DriftSpec:
    """Build a spec from a ``{family, parameters}`` descriptor."""
    family = family.lower()
    builders = {
        "zero": (Zero, ()),
        "constant": (Constant, ("c",)),
        "tanh": (Tanh, ("scale",)),
        "sine": (Sine, ("amplitude", "frequency")),
    }
    if family == "custom":
        raise DomainError("custom drift must be built from a table, see sdemin.cli")
    if family not in builders:
        raise DomainError(f"unknown drift family {family!r}")
    cls, names = builders[family]
    extra = set(params) - set(names)
    if extra:
        raise DomainError(f"unknown parameter(s) for {family}: {sorted(extra)}")
    missing = [n for n in names if n not in params and not (family == "tanh" and n == "scale")]
    if missing:
        raise DomainError(f"missing parameter(s) for {family}: {missing}")
    return cls(**{n: float(params[n]) for n in names if n in params})
