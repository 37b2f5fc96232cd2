import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdemin.drift import Constant, Sine, Tanh, Zero
from sdemin.errors import DomainError
from sdemin.paths import (Grid, Path, batch_minima, bridge_min_from_uniform, bridge_min_sample,
                          bridge_uniforms, brownian_increments, coarsen_noise, euler_maruyama,
                          integrate_brownian, path_min, sample_brownian, write_paths_csv)
from sdemin.rng import stream_layout, stream_rng


def test_grid():
    g = Grid(8)
    assert g.dt == 0.125 and g.times[-1] == 1.0 and g.times.size == 9
    assert Grid(64).refines(Grid(16)) == 4 and Grid(64).refines(Grid(24)) == 0
    with pytest.raises(DomainError):
        Grid(0)


def test_paths_start_at_zero():
    rng = np.random.default_rng(1)
    assert sample_brownian(Grid(32), rng).values[0] == 0.0
    assert euler_maruyama(Tanh(), Grid(32), rng).values[0] == 0.0
    with pytest.raises(DomainError):
        Path(Grid(2), [0.1, 0.0, 0.0], None)


def test_brownian_moments():
    grid = Grid(16)
    X = integrate_brownian(brownian_increments(np.random.default_rng(2), 100_000, grid))
    t = grid.times
    i, j = 4, 12
    n = X.shape[0]
    se_var = math.sqrt(2 / n) * t[j]
    assert abs(np.var(X[:, j]) - t[j]) < 4 * se_var
    cov = np.mean(X[:, i] * X[:, j])
    assert abs(cov - min(t[i], t[j])) < 4 * math.sqrt((t[i] * t[j] + t[i] ** 2) / n)


def test_em_constant_is_exact():
    grid = Grid(64)
    rng = np.random.default_rng(3)
    p = euler_maruyama(Constant(0.5), grid, rng)
    B = np.concatenate([[0.0], np.cumsum(p.noise)])
    np.testing.assert_allclose(p.values, 0.5 * grid.times + B, atol=1e-13)


def test_em_zero_drift_is_brownian():
    grid = Grid(32)
    noise = np.random.default_rng(4).standard_normal(32) * math.sqrt(grid.dt)
    p = euler_maruyama(Zero(), grid, noise=noise)
    np.testing.assert_array_equal(p.values[1:], np.cumsum(noise))


def test_em_recursion():
    grid = Grid(16)
    spec = Sine(0.5, 2.0)
    p = euler_maruyama(spec, grid, np.random.default_rng(5))
    x = 0.0
    for i in range(16):
        x = x + float(spec.b(x)) * grid.dt + p.noise[i]
        assert p.values[i + 1] == pytest.approx(x, abs=1e-14)


def test_bridge_law_tail():
    # P(m <= -0.5 | a = b = 0, dt = 1) = exp(-2 * 0.25)
    u = 1.0 - np.random.default_rng(6).random(1_000_000)
    m = bridge_min_from_uniform(0.0, 0.0, 1.0, u)
    p = np.mean(m <= -0.5)
    oracle = math.exp(-0.5)
    assert oracle == pytest.approx(0.6065307, abs=1e-7)
    assert abs(p - oracle) < 4 * math.sqrt(oracle * (1 - oracle) / m.size)


def test_bridge_law_general_endpoints():
    a, b, dt = 0.3, -0.2, 0.25
    u = 1.0 - np.random.default_rng(7).random(400_000)
    m = bridge_min_from_uniform(a, b, dt, u)
    for r in (-0.3, -0.5, -0.8):
        oracle = math.exp(-2 * (r - a) * (r - b) / dt)
        assert abs(np.mean(m <= r) - oracle) < 4 * math.sqrt(oracle * (1 - oracle) / m.size) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-6, 1.0), st.floats(1e-300, 1.0))
def test_bridge_min_below_endpoints(a, b, dt, u):
    m = float(bridge_min_from_uniform(a, b, dt, u))
    assert m <= min(a, b) + 1e-12
    assert math.isfinite(m)


def test_bridge_rejects_bad_dt():
    with pytest.raises(DomainError):
        bridge_min_sample(0.0, 0.0, 0.0, np.random.default_rng(0))


def test_refined_min_not_above_grid_min():
    rng = np.random.default_rng(8)
    grid = Grid(64)
    X = integrate_brownian(brownian_increments(rng, 2000, grid))
    mins = batch_minima(X, grid.dt, bridge_uniforms(rng, 2000, grid))
    assert np.all(mins.m_refined <= mins.m_grid)
    assert np.all(mins.m_grid <= 0.0)


def test_pruning_matches_unpruned_minimum():
    rng = np.random.default_rng(9)
    grid = Grid(128)
    X = integrate_brownian(brownian_increments(rng, 3000, grid))
    U = bridge_uniforms(rng, 3000, grid)
    mins = batch_minima(X, grid.dt, U)
    full = bridge_min_from_uniform(X[:, :-1], X[:, 1:], grid.dt, U)
    np.testing.assert_array_equal(mins.m_refined, full.min(axis=1))
    np.testing.assert_array_equal(mins.cell, full.argmin(axis=1))


def test_path_min_records():
    grid = Grid(4)
    p = Path(grid, [0.0, -1.0, 0.5, -1.0, 0.2], None)
    rec = path_min(p, refine=False)
    assert (rec.m, rec.tau, rec.refined, rec.index) == (-1.0, 0.25, False, 1)
    rec = path_min(p, np.random.default_rng(0), refine=True)
    assert rec.m <= -1.0 and rec.refined
    assert rec.tau == (rec.index + 0.5) * grid.dt
    with pytest.raises(DomainError):
        path_min(p, None, refine=True)


def test_reproducible_per_stream():
    grid = Grid(16)
    a = brownian_increments(stream_rng(42, 3), 10, grid)
    b = brownian_increments(stream_rng(42, 3), 10, grid)
    c = brownian_increments(stream_rng(42, 4), 10, grid)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_layout():
    assert stream_layout(10) == [(0, 10)]
    lay = stream_layout(10_000)
    assert sum(c for _, c in lay) == 10_000 and [s for s, _ in lay] == [0, 1, 2]


def test_coarsen_noise():
    dB = np.arange(8.0)
    np.testing.assert_array_equal(coarsen_noise(dB, 4), [6.0, 22.0])
    with pytest.raises(DomainError):
        coarsen_noise(dB, 3)


def test_write_paths_csv(tmp_path):
    grid = Grid(4)
    p = euler_maruyama(Tanh(), grid, np.random.default_rng(0))
    out = tmp_path / "p.csv"
    write_paths_csv(out, [p, p])
    lines = out.read_text().splitlines()
    assert lines[0] == "path,t,x,dB"
    assert len(lines) == 1 + 2 * 5
    assert lines[5].endswith(",")  # no increment after t = 1


def test_grid_min_bias_shrinks():
    from sdemin.engine import simulate

    bias = []
    for n in (64, 256, 1024):
        s = simulate(Zero(), Grid(n), 20_000, seed=11, refine=True)
        bias.append(float(np.mean(s.m_grid - s.m_refined)))
    assert bias[0] > bias[1] > bias[2] > 0
