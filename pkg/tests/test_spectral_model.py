import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minimax_interp.densities import Lorentzian, SpectralDensity, periodized_lorentzian, validate_density
from minimax_interp.errors import ModelError, SingularDensity
from minimax_interp.grids import FrequencyGrid, MissingSet, WeightFunction
from minimax_interp.spectral import exponential_transform, minimality_check


@pytest.fixture
def grid():
    return FrequencyGrid(4.0 * np.pi, 33)


def test_identity_density_passes(grid):
    rep = validate_density(SpectralDensity.identity(grid, 2))
    assert rep.passed
    assert np.all(rep.hermitian_defect == 0)
    assert np.all(rep.symmetry_defect == 0)
    np.testing.assert_allclose(rep.min_eigenvalue, 1.0)


def test_non_hermitian_sample_fails(grid):
    x = np.broadcast_to(np.eye(2, dtype=complex), (grid.n_points, 2, 2)).copy()
    x[5, 0, 1] = 1j
    x[5, 1, 0] = 1j
    rep = validate_density(SpectralDensity(grid, x))
    assert not rep.passed
    assert rep.hermitian_defect[5] > 0
    assert any(v["kind"] == "hermitian" and v["index"] == 5 for v in rep.violations)


def test_negative_eigenvalue_fails(grid):
    x = np.broadcast_to(np.eye(2, dtype=complex), (grid.n_points, 2, 2)).copy()
    x[grid.center] = np.diag([1.0, -0.5])
    rep = validate_density(SpectralDensity(grid, x))
    psd = [v for v in rep.violations if v["kind"] == "psd"]
    assert [v["index"] for v in psd] == [grid.center]
    assert psd[0]["min_eigenvalue"] == pytest.approx(-0.5)


def test_grid_rejects_even_points():
    with pytest.raises(ModelError):
        FrequencyGrid(1.0, 10)


def test_missing_set_rejects_overlap_and_positive_times():
    with pytest.raises(ModelError):
        MissingSet(((-2.0, -0.5), (-1.0, 0.0)), 0.1)
    with pytest.raises(ModelError):
        MissingSet(((-1.0, 0.5),), 0.1)


def test_missing_set_trapezoid_weights():
    S = MissingSet(((-3.0, -2.0), (-1.0, 0.0)), 0.25)
    assert S.size == 10
    assert S.weights.sum() == pytest.approx(2.0)
    assert S.is_lattice(0.25)


def test_singular_density_is_reported(grid):
    x = np.ones(grid.n_points)
    x[3] = 0.0
    with pytest.raises(SingularDensity) as info:
        SpectralDensity.scalar(grid, x).inverse()
    assert info.value.diagnostics["index"] == 3


def test_periodized_lorentzian_matches_direct_sum():
    lam = np.linspace(-3.0, 3.0, 13)
    direct = sum(1.0 / ((lam + k * 6.0) ** 2 + 0.7**2) for k in range(-20000, 20001))
    np.testing.assert_allclose(periodized_lorentzian(lam, 0.7, 6.0), direct, rtol=1e-4)


def test_lorentzian_covariance_is_exponential():
    F = Lorentzian.scalar(2.0, 1.0)
    lags = np.array([0.0, 0.5, 1.0, 3.0])
    np.testing.assert_allclose(np.real(F.covariance(lags)[:, 0, 0]), np.exp(-lags), atol=1e-12)


def test_folded_lorentzian_keeps_lattice_covariance():
    dt = 0.25
    grid = FrequencyGrid.nyquist(dt, 257)
    F = Lorentzian.scalar(2.0, 1.0).sample(grid)
    from minimax_interp.densities import quadrature_covariance
    lags = np.arange(0, 8) * dt
    cov = np.real(quadrature_covariance(F, lags)[:, 0, 0])
    np.testing.assert_allclose(cov, np.exp(-lags), rtol=1e-6)


class TestExponentialTransform:
    def setup_method(self):
        self.S = MissingSet(((-1.0, 0.0),), 1 / 512)

    def test_zero_frequency_is_interval_length(self):
        grid = FrequencyGrid(np.pi, 3)
        A = exponential_transform(WeightFunction.constant(self.S), self.S, grid)
        assert A[1, 0] == pytest.approx(1.0, abs=1e-12)

    def test_value_at_pi(self):
        grid = FrequencyGrid(np.pi, 3)
        A = exponential_transform(WeightFunction.constant(self.S), self.S, grid)
        assert abs(A[2, 0] - (-2j / np.pi)) < 1e-5

    def test_zero_weight(self, grid):
        A = exponential_transform(WeightFunction.constant(self.S, 0.0), self.S, grid)
        assert not np.any(A)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    def test_linear_and_conjugate_symmetric(self, c1, c2):
        grid = FrequencyGrid(8 * np.pi, 65)
        S = MissingSet(((-2.0, -1.0), (-0.5, 0.0)), 0.125)

        def poly(c):
            return WeightFunction.from_function(S, lambda t: c[0] + c[1] * t + c[2] * t**2)

        a1, a2 = poly(c1), poly(c2)
        A1, A2 = (exponential_transform(x, S, grid) for x in (a1, a2))
        A12 = exponential_transform(a1 + a2, S, grid)
        scale = max(1.0, float(np.max(np.abs(A12))))
        assert np.max(np.abs(A12 - A1 - A2)) <= 1e-12 * scale
        assert np.max(np.abs(A1[grid.mirror()] - np.conj(A1))) <= 1e-12 * max(1.0, np.max(np.abs(A1)))


class TestMinimality:
    def setup_method(self):
        self.grid = FrequencyGrid(64.0, 4097)
        self.S = MissingSet(((-1.0, 0.0),), 1 / 1024)
        self.F = Lorentzian.scalar(1.0, 1.0).sample(self.grid, fold=False)

    def test_smooth_probe_is_finite(self):
        probe = WeightFunction.from_function(self.S, lambda t: np.sin(np.pi * t) ** 2)
        out = minimality_check(self.F, probe, self.S, self.grid)
        assert not out["divergence_flag"]
        wide = FrequencyGrid(128.0, 8193)
        again = minimality_check(self.F.resample(wide), probe, self.S, wide)
        assert again["value"] == pytest.approx(out["value"], rel=1e-2)

    def test_step_probe_diverges(self):
        out = minimality_check(self.F, WeightFunction.constant(self.S), self.S, self.grid)
        assert out["divergence_flag"]

    def test_identity_is_parseval(self):
        probe = WeightFunction.constant(self.S)
        out = minimality_check(SpectralDensity.identity(self.grid), probe, self.S, self.grid)
        b = exponential_transform(probe, self.S, self.grid)[:, 0]
        assert out["value"] == pytest.approx(float(np.sum(self.grid.weights * np.abs(b) ** 2)), rel=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.1, 10.0), st.sampled_from([1.0, -1.0]))
    def test_quadratic_in_probe(self, c, sign):
        probe = WeightFunction.from_function(self.S, lambda t: np.sin(np.pi * t) ** 2)
        base = minimality_check(self.F, probe, self.S, self.grid)["value"]
        scaled = minimality_check(self.F, probe.scaled(sign * c), self.S, self.grid)["value"]
        assert scaled == pytest.approx(c**2 * base, rel=1e-10)


def test_weight_conditions_use_absolute_time():
    S = MissingSet(((-2.0, -1.0),), 0.01)
    cond = WeightFunction.constant(S).conditions()
    assert cond["l1"] == pytest.approx(1.0)
    assert cond["abs_t_weighted_l2"] == pytest.approx(1.5, rel=1e-6)
