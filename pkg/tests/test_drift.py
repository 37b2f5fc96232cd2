import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from sdemin.drift import (Bounds, Constant, Custom, Sine, Tanh, Zero, drift_triple, from_config,
                          potential, validate_spec)
from sdemin.errors import DomainError

BUILTINS = [Zero(), Constant(0.5), Constant(-1.3), Tanh(1.0), Tanh(0.4), Sine(0.5, 2.0), Sine(1.0, 0.7)]


def tanh_table(step=0.1, lo=-10.0, hi=10.0):
    knots = np.arange(lo, hi + step / 2, step)
    return knots, np.tanh(knots)


def test_triples():
    assert drift_triple(Zero(), 1.7) == (0.0, 0.0, 0.0)
    assert drift_triple(Constant(0.5), -2.0) == (0.5, 0.0, 0.0)
    assert drift_triple(Tanh(1.0), 0.0) == (0.0, 1.0, 0.0)


def test_potential_examples():
    assert potential(Zero(), 3.2) == 0.0
    assert potential(Constant(0.5), 2.0) == 1.0
    oracle, _ = quad(math.tanh, 0.0, 1.0, epsabs=0, epsrel=1e-13)
    assert oracle == pytest.approx(0.4337809, abs=1e-7)
    assert potential(Tanh(1.0), 1.0) == pytest.approx(oracle, rel=1e-12)


@pytest.mark.parametrize("spec", BUILTINS, ids=repr)
def test_potential_matches_quadrature(spec):
    for eta in (-7.5, -1.0, 0.3, 4.0):
        ref, _ = quad(lambda r: float(spec.b(r)), 0.0, eta, epsabs=1e-14, epsrel=1e-12)
        assert potential(spec, eta) == pytest.approx(ref, rel=1e-10, abs=1e-12)
    assert potential(spec, 0.0) == 0.0


@pytest.mark.parametrize("spec", BUILTINS, ids=repr)
@pytest.mark.parametrize("delta", [1e-3, 1e-4])
def test_derivatives_match_central_differences(spec, delta):
    eta = np.linspace(-10, 10, 2001)
    fd1 = (spec.b(eta + delta) - spec.b(eta - delta)) / (2 * delta)
    fd2 = (spec.db(eta + delta) - spec.db(eta - delta)) / (2 * delta)
    # |error| <= sup|b'''| delta^2 / 6 plus round-off
    c = 10.0
    assert np.max(np.abs(spec.db(eta) - fd1)) <= c * delta**2 + 1e-10
    assert np.max(np.abs(spec.d2b(eta) - fd2)) <= c * delta**2 + 1e-10


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(BUILTINS), st.floats(-10, 10), st.floats(-10, 10))
def test_potential_additive(spec, zeta, eta):
    piece, _ = quad(lambda r: float(spec.b(r)), zeta, eta, epsabs=1e-13, epsrel=1e-11)
    assert potential(spec, eta) == pytest.approx(potential(spec, zeta) + piece, abs=1e-9)


@pytest.mark.parametrize("spec", BUILTINS, ids=repr)
def test_validate_builtins_pass(spec):
    rep = validate_spec(spec)
    assert rep.passed, rep.failures
    for o, d in zip(rep.observed.as_tuple(), rep.declared.as_tuple()):
        assert o <= d * (1 + 1e-12)


def test_validate_zero_reports_zero_residuals():
    rep = validate_spec(Zero())
    assert rep.passed and rep.residual_db == 0.0 and rep.residual_d2b == 0.0


def test_validate_tanh_observed_sups():
    rep = validate_spec(Tanh(1.0))
    assert rep.observed.b <= 1.0 and rep.observed.db <= 1.0
    # the dense scan attains sup|b'| = 1 at 0 and nearly reaches sup|b''|
    assert rep.observed.db == pytest.approx(1.0)
    assert rep.observed.d2b == pytest.approx(4 / (3 * math.sqrt(3)), rel=1e-5)


def test_custom_clean_table_passes():
    knots, vals = tanh_table()
    spec = Custom(knots, vals, Bounds(1.0, 1.01, 0.8))
    rep = validate_spec(spec)
    assert rep.passed, rep.failures
    assert float(spec.b(0.37)) == pytest.approx(math.tanh(0.37), abs=1e-4)
    assert potential(spec, 1.0) == pytest.approx(math.log(math.cosh(1.0)), abs=1e-5)


def test_custom_corrupted_table_fails_at_the_perturbation():
    knots, vals = tanh_table()
    k = int(np.argmin(np.abs(knots - 2.0)))
    vals = vals.copy()
    vals[k] += 0.05
    rep = validate_spec(Custom(knots, vals, Bounds(1.0, 1.01, 0.8)))
    assert not rep.passed
    assert rep.residual_d2b > 1e-6
    assert abs(rep.where_d2b - 2.0) < 0.3
    assert any(f.startswith("b'' residual") for f in rep.failures)


def test_custom_outside_range_is_domain_error():
    knots, vals = tanh_table(lo=-2.0, hi=2.0)
    spec = Custom(knots, vals, Bounds(1, 1, 1))
    with pytest.raises(DomainError):
        drift_triple(spec, 2.5)
    with pytest.raises(DomainError):
        potential(spec, -3.0)


def test_declared_bound_violation_is_reported():
    knots, vals = tanh_table()
    rep = validate_spec(Custom(knots, 2 * vals, Bounds(1.0, 2.1, 1.7)))
    assert not rep.passed
    assert any("sup|b|" in f for f in rep.failures)


def test_from_config():
    assert from_config("constant", {"c": 0.5}) == Constant(0.5)
    assert from_config("tanh", {}) == Tanh(1.0)
    assert from_config("sine", {"amplitude": 0.5, "frequency": 2}) == Sine(0.5, 2.0)
    with pytest.raises(DomainError):
        from_config("linear", {})
    with pytest.raises(DomainError):
        from_config("constant", {"c": 1, "k": 2})
    with pytest.raises(DomainError):
        Sine(1.0, 0.0)
