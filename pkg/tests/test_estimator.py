import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minimax_interp.densities import Lorentzian, SpectralDensity
from minimax_interp.estimator import cross_mse, estimate, relative_gap, verify_orthogonality
from minimax_interp.grids import FrequencyGrid, MissingSet, WeightFunction
from minimax_interp.spectral import exponential_transform


@pytest.fixture(scope="module")
def ou():
    dt = 1 / 32
    grid = FrequencyGrid.nyquist(dt, 1025)
    S = MissingSet(((-1.0, 0.0),), dt)
    F = Lorentzian.scalar(2.0, 1.0).sample(grid)
    return grid, S, WeightFunction.constant(S), F


def test_zero_functional(ou):
    grid, S, a, F = ou
    est = estimate(F, F.scale(0.5), S, a.scaled(0.0), grid)
    assert not np.any(est.h)
    assert est.delta_operator_form == 0.0
    assert est.delta_spectral_form == 0.0


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 50.0))
def test_joint_scaling(c):
    dt = 1 / 16
    grid = FrequencyGrid.nyquist(dt, 257)
    S = MissingSet(((-1.0, 0.0),), dt)
    a = WeightFunction.from_function(S, lambda t: np.cos(t))
    F = Lorentzian.scalar(2.0, 1.0).sample(grid)
    G = F.scale(0.4)
    base = estimate(F, G, S, a, grid)
    scaled = estimate(F.scale(c), G.scale(c), S, a, grid)
    assert relative_gap(scaled.delta, c * base.delta) <= 1e-8
    assert np.max(np.abs(scaled.h - base.h)) <= 1e-8 * np.max(np.abs(base.h))


def test_noiseless_is_the_small_noise_limit(ou):
    grid, S, a, F = ou
    exact = estimate(F, None, S, a, grid)
    assert exact.c.mode == "noiseless"
    tiny = SpectralDensity.constant(grid, [[1e-12]])
    limit = estimate(F, tiny, S, a, grid, mode="noisy")
    assert np.max(np.abs(limit.h - exact.h)) <= 1e-4 * np.max(np.abs(exact.h))


def test_cross_mse_reproduces_delta(ou):
    grid, S, a, F = ou
    G = F.scale(0.5)
    est = estimate(F, G, S, a, grid)
    assert relative_gap(cross_mse(est.h, F, G, est.A), est.delta) <= 1e-8


def test_cross_mse_is_affine_in_signal(ou):
    grid, S, a, F = ou
    G = F.scale(0.5)
    h = estimate(F, G, S, a, grid).h
    A = exponential_transform(a, S, grid)
    F1, F2 = F, SpectralDensity.constant(grid, [[0.2]])
    values = [cross_mse(h, F1.combine(F2, t), G, A) for t in (0.0, 0.5, 1.0)]
    assert abs(values[1] - 0.5 * (values[0] + values[2])) <= 1e-10 * max(map(abs, values))


def test_zero_characteristic_gives_variance(ou):
    grid, S, a, F = ou
    A = exponential_transform(a, S, grid)
    var = cross_mse(np.zeros_like(A), F, SpectralDensity.zeros(grid), A)
    # variance of the integral of an OU path with covariance exp(-|t|) over a unit interval
    assert var == pytest.approx(2 * np.exp(-1.0), rel=1e-3)


def test_orthogonality_detects_non_optimal(ou):
    grid, S, a, F = ou
    G = F.scale(0.5)
    A = exponential_transform(a, S, grid)
    times = [-3.0, -2.0, 0.5, 1.0, 2.0]
    assert verify_orthogonality(np.zeros_like(A), F, G, A, times) > 1e-2
    assert verify_orthogonality(np.zeros_like(A), F, G, 0 * A, times) == 0.0
    est = estimate(F, G, S, a, grid)
    assert verify_orthogonality(est.h, F, G, est.A, times) <= 1e-3


def test_bivariate_decouples_for_diagonal_densities():
    dt = 1 / 32
    grid = FrequencyGrid.nyquist(dt, 1025)
    S = MissingSet(((-1.0, 0.0),), dt)
    F = Lorentzian.diagonal([2.0, 4.0], [1.0, 2.0]).sample(grid)
    G = SpectralDensity.constant(grid, 0.05 * np.eye(2))
    a = WeightFunction(S, np.tile([1.0, 0.5], (S.size, 1)))
    joint = estimate(F, G, S, a, grid).delta
    parts = 0.0
    for scale, width, weight in [(2.0, 1.0, 1.0), (4.0, 2.0, 0.5)]:
        Fk = Lorentzian.scalar(scale, width).sample(grid)
        noise = SpectralDensity.constant(grid, [[0.05]])
        parts += estimate(Fk, noise, S, WeightFunction.constant(S, weight), grid).delta
    assert joint == pytest.approx(parts, rel=1e-9)
