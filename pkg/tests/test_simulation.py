import numpy as np
import pytest

from minimax_interp.densities import Lorentzian, SpectralDensity
from minimax_interp.errors import ModelError
from minimax_interp.estimator import cross_mse, estimate
from minimax_interp.grids import FrequencyGrid, MissingSet, WeightFunction
from minimax_interp.simulation import (
    SimulationConfig, apply_estimate, empirical_mse, functional_value, gaussian_oracle, simulate_pair,
)

DT = 1 / 16


@pytest.fixture(scope="module")
def ou():
    grid = FrequencyGrid.nyquist(DT, 1025)
    S = MissingSet(((-1.0, 0.0),), DT)
    F = Lorentzian.scalar(2.0, 1.0).sample(grid)
    cfg = SimulationConfig((-6.0, 5.0), DT, 10_000, seed=11)
    return grid, S, WeightFunction.constant(S), F, cfg


def test_same_seed_same_paths(ou):
    grid, S, a, F, cfg = ou
    one = simulate_pair(F, F, cfg, range(3))
    two = simulate_pair(F, F, cfg, range(3))
    assert np.array_equal(one.xi, two.xi) and np.array_equal(one.eta, two.eta)


def test_replications_do_not_depend_on_blocking(ou):
    grid, S, a, F, cfg = ou
    whole = simulate_pair(F, F, cfg, range(6))
    tail = simulate_pair(F, F, cfg, range(3, 6))
    assert np.array_equal(whole.xi[3:], tail.xi)


def test_lag_zero_covariance(ou):
    grid, S, a, F, cfg = ou
    data = simulate_pair(F, SpectralDensity.zeros(grid), cfg)
    x = data.xi[:, data.times.size // 2, 0]
    target = float(np.real(F.integral()[0, 0]))
    se = np.std(x**2, ddof=1) / np.sqrt(x.size)
    assert abs(np.mean(x**2) - target) <= 3 * se
    assert not np.any(data.eta)


def test_diagonal_density_gives_uncorrelated_components():
    grid = FrequencyGrid.nyquist(DT, 1025)
    F = Lorentzian.diagonal([2.0, 4.0], [1.0, 2.0]).sample(grid)
    cfg = SimulationConfig((-2.0, 2.0), DT, 10_000, seed=3)
    data = simulate_pair(F, SpectralDensity.zeros(grid, 2), cfg)
    prod = data.xi[:, 10, 0] * data.xi[:, 10, 1]
    assert abs(prod.mean()) <= 3 * prod.std(ddof=1) / np.sqrt(prod.size)


def test_apply_is_linear_and_vanishes_at_zero(ou):
    grid, S, a, F, cfg = ou
    data = simulate_pair(F, F.scale(0.5), cfg, range(20))
    h = estimate(F, F.scale(0.5), S, a, grid).h
    np.testing.assert_allclose(apply_estimate(2 * h, data), 2 * apply_estimate(h, data), rtol=1e-12)
    assert not np.any(apply_estimate(np.zeros_like(h), data))


def test_spectral_and_time_modes_agree(ou):
    grid, S, a, F, cfg = ou
    est = estimate(F, None, S, a, grid)
    G = SpectralDensity.zeros(grid)
    small = SimulationConfig(cfg.window, DT, 2000, seed=5)
    spectral = empirical_mse(F, G, est.h, a, S, small, est.delta, "spectral")
    timed = empirical_mse(F, G, est.h, a, S, small, est.delta, "time")
    assert timed.empirical_mse == pytest.approx(spectral.empirical_mse, rel=0.02)


def test_zero_estimate_measures_the_variance(ou):
    grid, S, a, F, cfg = ou
    est = estimate(F, None, S, a, grid)
    var = cross_mse(np.zeros_like(est.h), F, SpectralDensity.zeros(grid), est.A)
    res = empirical_mse(F, SpectralDensity.zeros(grid), np.zeros_like(est.h), a, S, cfg, var)
    assert abs(res.z_score) <= 3


@pytest.mark.slow
def test_equal_signal_and_noise_monte_carlo(ou):
    grid, S, a, F, cfg = ou
    est = estimate(F, F, S, a, grid)
    res = empirical_mse(F, F, est.h, a, S, cfg, est.delta)
    assert res.n_replications == 10_000
    assert abs(res.z_score) <= 3


def test_functional_uses_trapezoid_weights(ou):
    grid, S, a, F, cfg = ou
    data = simulate_pair(F, F, cfg, range(2))
    inside = S.contains(data.times)
    manual = np.einsum("k,rk->r", S.weights, data.xi[:, inside, 0])
    np.testing.assert_allclose(functional_value(data, a), manual, rtol=1e-12)


class TestOracle:
    def setup_method(self):
        self.F = Lorentzian.scalar(2.0, 1.0)
        self.S = MissingSet(((-1.0, 0.0),), 0.05)
        self.a = WeightFunction.constant(self.S)

    def test_zero_functional(self):
        assert gaussian_oracle(self.F, None, self.S, self.a.scaled(0.0), (-3.0, 2.0), 0.05).mse == 0.0

    def test_uninformative_observations(self):
        res = gaussian_oracle(self.F, self.F.scaled(1e6), self.S, self.a, (-3.0, 2.0), 0.05)
        assert res.mse == pytest.approx(2 * np.exp(-1.0), rel=1e-2)
        assert res.variance == pytest.approx(2 * np.exp(-1.0), rel=1e-3)

    def test_larger_window_never_hurts(self):
        values = [gaussian_oracle(self.F, self.F.scaled(0.5), self.S, self.a, (-1.0 - w, w), 0.05).mse
                  for w in (0.5, 1.0, 2.0, 4.0)]
        assert all(y <= x + 1e-12 for x, y in zip(values, values[1:]))


def test_window_must_contain_missing_set(ou):
    grid, S, a, F, cfg = ou
    with pytest.raises(ModelError):
        SimulationConfig((-0.5, 5.0), DT).check(S, F)
    with pytest.raises(ModelError, match="correlation scales"):
        SimulationConfig((-2.0, 1.0), DT).check(S, F)
    report = SimulationConfig((-6.0, 5.0), DT).check(S, F)
    assert report["correlation_scale"] == pytest.approx(1.0, rel=0.05)
