import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdemin.drift import Constant, Sine, Tanh, Zero
from sdemin.errors import ContractError, NumericError
from sdemin.girsanov import (check_ito_identity, log_psi, log_psi_batch, log_q1_closed, log_q1_ito,
                             log_q1_ito_batch, psi_bound_log, shifted_mean, trapezoid,
                             weight_normalization)
from sdemin.paths import Grid, Path, brownian_increments, euler_maruyama, euler_maruyama_batch, sample_brownian


def test_trapezoid_exact_on_linear():
    g = Grid(10)
    assert trapezoid(3 * g.times + 1, g.dt) == pytest.approx(2.5, abs=1e-14)


def test_log_psi_examples():
    grid = Grid(16)
    line = Path(grid, grid.times, None)
    assert log_psi(Zero(), line) == 0.0
    # v(1) - c^2/2 = 0.5 - 0.125
    assert log_psi(Constant(0.5), line) == pytest.approx(0.375, abs=1e-14)
    assert log_q1_closed(Constant(0.5), line) == pytest.approx(-0.375, abs=1e-14)


def test_log_q1_ito_constant():
    grid = Grid(32)
    noise = np.full(32, 1.0 / 32)  # B(1) = 1
    p = euler_maruyama(Constant(0.5), grid, noise=noise)
    assert log_q1_ito(Constant(0.5), p) == pytest.approx(-0.625, abs=1e-13)
    assert log_q1_ito(Zero(), p) == 0.0
    with pytest.raises(ContractError):
        log_q1_ito(Constant(0.5), Path(grid, p.values, None))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([Constant(-0.7), Tanh(1.0), Sine(0.5, 2.0), Tanh(0.3)]), st.integers(0, 2**32))
def test_closed_is_negative_log_psi(spec, seed):
    p = sample_brownian(Grid(64), np.random.default_rng(seed))
    assert log_q1_closed(spec, p) == -log_psi(spec, p)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([Constant(0.5), Tanh(1.0), Sine(0.5, 2.0)]), st.integers(0, 2**32))
def test_psi_bound(spec, seed):
    p = sample_brownian(Grid(128), np.random.default_rng(seed))
    assert log_psi(spec, p) <= float(psi_bound_log(spec, np.max(np.abs(p.values)))) + 1e-12


def test_ito_identity_zero_drift_rms_is_zero():
    rep = check_ito_identity(Zero(), 200, [Grid(16), Grid(64)], seed=0)
    assert rep.rms == [0.0, 0.0] and rep.passed


def test_ito_identity_constant():
    rep = check_ito_identity(Constant(0.5), 1000, [Grid(2**10), Grid(2**12), Grid(2**14)], seed=1)
    assert rep.passed, rep.failures
    assert rep.rms[-1] < 0.01


def test_ito_identity_tanh_rate():
    rep = check_ito_identity(Tanh(), 1000, [Grid(2**8), Grid(2**10), Grid(2**12)], seed=2)
    assert rep.passed, rep.failures
    ratios = [a / b for a, b in zip(rep.rms, rep.rms[1:])]
    # each step quarters dt: an order-1/2 error halves
    for r in ratios:
        assert 1.2**2 <= r <= 3.0**2


def test_ito_identity_rejects_unnested_grids():
    with pytest.raises(ContractError):
        check_ito_identity(Tanh(), 10, [Grid(16), Grid(24)], seed=0)


def _stratonovich_residual_rms(spec, grid, n, seed):
    dB = brownian_increments(np.random.default_rng(seed), n, grid)
    X = euler_maruyama_batch(spec, dB, grid.dt)
    b = spec.b(X)
    mid = 0.5 * (b[:, :-1] + b[:, 1:])
    log_q1_mid = -0.5 * trapezoid(b * b, grid.dt) - np.sum(mid * dB, axis=1)
    res = log_q1_mid + log_psi_batch(spec, X, grid.dt)
    return float(np.sqrt(np.mean(res**2)))


def test_midpoint_stochastic_sum_does_not_converge():
    spec = Tanh()
    rms = [_stratonovich_residual_rms(spec, Grid(n), 2000, 3) for n in (256, 4096)]
    ito = check_ito_identity(spec, 2000, [Grid(256), Grid(4096)], seed=3).rms
    # the midpoint sum picks up the Ito correction (1/2) int b' dt, which does not vanish
    assert rms[1] > 0.3 and rms[1] > 0.8 * rms[0]
    assert ito[1] < 0.1 * rms[1]


def test_ito_batch_matches_single_path():
    spec = Sine(0.5, 2.0)
    p = euler_maruyama(spec, Grid(64), np.random.default_rng(4))
    batch = log_q1_ito_batch(spec, p.values[None], p.noise[None], p.grid.dt)[0]
    assert log_q1_ito(spec, p) == batch


def test_shifted_mean_handles_large_logs():
    log_w = np.log(np.arange(1.0, 1001.0)) + 690.0
    mean, se = shifted_mean(log_w)
    assert math.isfinite(mean) and math.isfinite(se)
    assert mean == pytest.approx(500.5 * math.exp(690.0), rel=1e-12)
    with pytest.raises(NumericError):
        shifted_mean(log_w + 100.0)


def test_weight_normalization_zero_and_tanh():
    assert weight_normalization(Zero(), 2000, Grid(64), seed=0) == (1.0, 0.0)
    mean, se = weight_normalization(Tanh(), 50_000, Grid(256), seed=5)
    assert abs(mean - 1.0) < 4 * se + 5e-3
