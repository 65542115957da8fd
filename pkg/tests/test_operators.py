from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minimax_interp.densities import Lorentzian, SpectralDensity
from minimax_interp.errors import IllConditioned
from minimax_interp.grids import FrequencyGrid, MissingSet, WeightFunction
from minimax_interp.operators import (
    assemble_system, content_hash, kernel_at_lags, load_cache, save_cache, solve_c, toeplitz_defect,
)


@pytest.fixture(scope="module")
def setup():
    dt = 1 / 32
    grid = FrequencyGrid.nyquist(dt, 1025)
    S = MissingSet(((-3.0, -2.0), (-1.0, 0.0)), dt)
    F = Lorentzian.scalar(2.0, 1.0).sample(grid)
    return grid, S, F


def test_constant_symbol_gives_sinc_kernel():
    grid = FrequencyGrid(10.0, 20001)
    lags = np.array([0.0, 0.13, 0.7, 1.9])
    k = np.real(kernel_at_lags(np.ones((grid.n_points, 1, 1), dtype=complex), grid, lags)[:, 0, 0])
    expected = np.where(lags == 0, 10.0 / np.pi, np.sin(10.0 * lags) / (np.pi * np.where(lags == 0, 1, lags)))
    np.testing.assert_allclose(k, expected, atol=1e-6)


def test_noiseless_operators(setup):
    grid, S, F = setup
    sys = assemble_system(F, SpectralDensity.zeros(grid), S)
    np.testing.assert_allclose(sys.R, sys.mass, atol=1e-12 * np.abs(sys.mass).max())
    assert not np.any(sys.Q)


def test_equal_signal_and_noise_halve_the_mass(setup):
    grid, S, F = setup
    sys = assemble_system(F, F, S)
    np.testing.assert_allclose(sys.R, 0.5 * sys.mass, atol=1e-10 * np.abs(sys.mass).max())


def test_invariants(setup):
    grid, S, F = setup
    sys = assemble_system(F, F.scale(0.3), S)
    diag = sys.diagnostics()
    assert diag["hermitian_defect_B"] <= 1e-8
    assert diag["min_eigenvalue_B"] >= -1e-8 * diag["max_eigenvalue_B"]
    assert diag["min_eigenvalue_Q"] >= -1e-8 * np.linalg.norm(sys.Q, 2)
    assert diag["toeplitz_defect_B"] <= 1e-8
    assert diag["toeplitz_defect_Q"] <= 1e-8


def test_toeplitz_defect_detects_perturbation(setup):
    grid, S, F = setup
    B = assemble_system(F, F, S).B.copy()
    B[3, 4] *= 1.01
    assert toeplitz_defect(B, S, 1) > 1e-4


@settings(max_examples=8, deadline=None)
@given(st.floats(0.1, 20.0))
def test_scaling_of_operators(c):
    dt = 1 / 16
    grid = FrequencyGrid.nyquist(dt, 257)
    S = MissingSet(((-1.0, 0.0),), dt)
    F = Lorentzian.scalar(2.0, 1.0).sample(grid)
    G = F.scale(0.5)
    base = assemble_system(F, G, S)
    scaled = assemble_system(F.scale(c), G.scale(c), S)
    for name, factor in (("B", 1 / c), ("R", 1.0), ("Q", c)):
        x, y = getattr(scaled, name), getattr(base, name) * factor
        assert np.linalg.norm(x - y) <= 1e-10 * np.linalg.norm(y)


def test_random_vectors_see_psd_B(setup):
    grid, S, F = setup
    sys = assemble_system(F, F.scale(0.5), S)
    rng = np.random.default_rng(0)
    nB = np.linalg.norm(sys.B, 2)
    for _ in range(20):
        v = rng.standard_normal(sys.size) + 1j * rng.standard_normal(sys.size)
        assert np.real(np.vdot(v, sys.B @ v)) >= -1e-8 * nB * np.vdot(v, v).real


def test_zero_weight_gives_zero_solution(setup):
    grid, S, F = setup
    sys = assemble_system(F, F, S)
    sol = solve_c(sys, WeightFunction.constant(S, 0.0))
    assert not np.any(sol.c)
    assert sol.residual == 0.0


def test_white_noise_limit():
    dt = np.pi / 256
    grid = FrequencyGrid.nyquist(dt, 2049)
    S = MissingSet(((-1.0, 0.0),), 1 / 256)
    a = WeightFunction.from_function(S, lambda t: 1.0 + t)
    sys = assemble_system(SpectralDensity.identity(grid), SpectralDensity.zeros(grid), S)
    sol = solve_c(sys, a, "noiseless")
    assert np.max(np.abs(sol.c[:, 0] - a.values[:, 0])) <= 0.05 * np.max(np.abs(a.values))


def test_unregularized_solve_is_accurate(setup):
    grid, S, F = setup
    sys = assemble_system(F, F.scale(0.5), S)
    assert sys.condition_number_B <= 1e8
    sol = solve_c(sys, WeightFunction.constant(S), "noisy", tikhonov=0.0)
    assert sol.residual <= 1e-6


def test_residual_grows_with_regularization(setup):
    grid, S, F = setup
    sys = assemble_system(F, F.scale(0.5), S)
    a = WeightFunction.constant(S)
    eps = 1e-6 * sys.eigenvalues_B[-1]
    residuals = [solve_c(sys, a, "noisy", eps * 2**k).residual for k in range(6)]
    assert all(x <= y for x, y in zip(residuals, residuals[1:]))


def test_ill_conditioned_without_regularization(setup):
    # the singularity guard on F + G caps cond(B) near 1e12, so the system is built by hand
    grid, S, F = setup
    sys = assemble_system(F, F, S)
    ev = np.geomspace(1e-13, 1.0, sys.size)
    bad = replace(sys, B=np.diag(ev).astype(complex), eigenvalues_B=ev)
    with pytest.raises(IllConditioned):
        solve_c(bad, WeightFunction.constant(S), "noisy", tikhonov=0.0)
    assert solve_c(bad, WeightFunction.constant(S), "noisy").regularization_used > 0


def test_cache_round_trip(setup, tmp_path):
    grid, S, F = setup
    sys = assemble_system(F, F, S)
    key = content_hash({"model": "x", "n": 1})
    path = tmp_path / "ops.bin"
    save_cache(sys, str(path), key)
    loaded = load_cache(str(path), key)
    for name in ("B", "R", "Q", "mass"):
        ref = getattr(sys, name)
        assert np.abs(loaded[name] - ref).max() <= 1e-6 * np.abs(ref).max()
    assert load_cache(str(path), content_hash({"model": "y"})) is None
    assert load_cache(str(tmp_path / "missing.bin"), key) is None
