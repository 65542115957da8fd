import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minimax_interp.densities import Lorentzian, SpectralDensity
from minimax_interp.errors import InfeasibleClass, ModelError, UnsupportedClass
from minimax_interp.estimator import cross_mse, estimate
from minimax_interp.grids import FrequencyGrid, MissingSet, WeightFunction
from minimax_interp.minimax import (
    DensityClass, SaddlePoint, central_member, kkt_residuals, maximize_class, maximize_linear,
    project_membership, random_member, saddle_iterate, singleton,
)
from minimax_interp.minimax.classes import binned_bounds
from minimax_interp.minimax.kkt import ball_equalities
from minimax_interp.minimax.lmo import linear_value

GRID = FrequencyGrid.nyquist(0.25, 31)
LEVEL = np.pi / GRID.lambda_max
WHITE = SpectralDensity.constant(GRID, [[LEVEL]])


def _classes():
    V = SpectralDensity.constant(GRID, [[0.5 * LEVEL]])
    U = SpectralDensity.constant(GRID, [[3.0 * LEVEL]])
    return {
        "D0-1": DensityClass("D0-1", 1, {"p": 1.0}),
        "Deps-1": DensityClass("Deps-1", 1, {"q": 1.0, "eps": 0.2}, {"G1": WHITE}),
        "DVU-1": DensityClass("DVU-1", 1, {"p": 1.0}, {"V": V, "U": U}),
        "D2delta-1": DensityClass("D2delta-1", 1, {"delta": 0.05}, {"G1": WHITE}),
    }


class TestMembership:
    def test_moment_class_with_own_integral(self):
        F = Lorentzian.scalar(2.0, 1.0).sample(GRID)
        p = float(np.real(F.integral()[0, 0]))
        assert project_membership(DensityClass("D0-1", 1, {"p": p}), F)["member"]

    def test_contamination_without_slack(self):
        D = DensityClass("Deps-1", 1, {"q": 1.0, "eps": 0.0}, {"G1": WHITE})
        assert project_membership(D, WHITE)["member"]
        tilted = 1.0 + 0.5 * np.cos(GRID.nodes * np.pi / GRID.lambda_max)
        tilted /= np.sum(GRID.weights * tilted) / (2 * np.pi)
        G = SpectralDensity.scalar(GRID, tilted)
        assert float(np.real(G.integral()[0, 0])) == pytest.approx(1.0)
        rep = project_membership(D, G)
        assert not rep["member"] and "contamination" in rep["violations"]

    def test_ball_center(self):
        rep = project_membership(DensityClass("D2delta-1", 1, {"delta": 0.1}, {"G1": WHITE}), WHITE)
        assert rep["member"] and rep["defects"]["ball"] == 0.0

    def test_bad_parameters(self):
        with pytest.raises(ModelError):
            DensityClass("D0-9", 1, {"p": 1.0})
        with pytest.raises(ModelError):
            DensityClass("Deps-1", 1, {"q": 1.0})
        with pytest.raises(ModelError):
            DensityClass("DVU-1", 1, {"p": 1.0}, {"V": WHITE, "U": WHITE.scale(0.5)})

    def test_infeasible_budget(self):
        D = DensityClass("DVU-1", 1, {"p": 10.0}, {"V": WHITE.scale(0.5), "U": WHITE.scale(2.0)})
        with pytest.raises(InfeasibleClass):
            binned_bounds(D, GRID)


class TestLinearMaximizer:
    def test_moment_class_picks_one_bin(self):
        D = DensityClass("D0-1", 1, {"p": 1.0})
        scores = np.linspace(0.1, 1.0, 16)
        scores[6] = 2.0
        lay = D.layout(GRID)
        X = maximize_class(D, lay.expand(scores)[:, None, None].astype(complex), GRID)
        tau = lay.average(X.trace())
        assert np.count_nonzero(tau) == 1 and tau[6] * lay.measure[6] == pytest.approx(1.0)

    def test_flat_scores_spread_uniformly(self):
        D = DensityClass("D0-1", 1, {"p": 1.0})
        X = maximize_class(D, np.ones((GRID.n_points, 1, 1), complex), GRID)
        np.testing.assert_allclose(X.trace(), LEVEL, rtol=1e-12)

    def test_ties_go_to_lowest_frequency(self):
        D = DensityClass("D0-1", 1, {"p": 1.0})
        lay = D.layout(GRID)
        scores = np.full(16, 0.5)
        scores[[3, 9]] = 1.0
        tau = lay.average(maximize_class(D, lay.expand(scores)[:, None, None].astype(complex), GRID).trace())
        assert np.flatnonzero(tau).tolist() == [3]

    def test_higher_kinds_are_rejected(self):
        D = DensityClass("D0-3", 1, {"p": 1.0, "B1": [[1.0]]})
        with pytest.raises(UnsupportedClass):
            maximize_class(D, np.ones((GRID.n_points, 1, 1), complex), GRID)

    @settings(max_examples=20, deadline=None)
    @given(st.sampled_from(sorted(_classes())), st.integers(0, 2**32 - 1))
    def test_result_is_member_and_dominates(self, kind, seed):
        D = _classes()[kind]
        rng = np.random.default_rng(seed)
        N = rng.exponential(size=GRID.n_points)
        N = (0.5 * (N + N[::-1]))[:, None, None].astype(complex)
        X = maximize_class(D, N, GRID)
        assert project_membership(D, X)["member"]
        best = linear_value(X, N)
        for _ in range(100):
            Y = random_member(D, GRID, rng)
            assert linear_value(Y, N) <= best * (1 + 1e-10)

    def test_componentwise_bivariate_class(self):
        grid = FrequencyGrid.nyquist(0.5, 15)
        D = DensityClass("D0-2", 2, {"p_k": [1.0, 2.0]})
        rng = np.random.default_rng(1)
        y = rng.standard_normal((grid.n_points, 2)) + 1j * rng.standard_normal((grid.n_points, 2))
        N = np.einsum("ni,nj->nij", np.conj(y), y)
        X = maximize_class(D, N, grid)
        assert project_membership(D, X, tol=1e-6)["member"]
        best = linear_value(X, N)
        for _ in range(50):
            assert linear_value(random_member(D, grid, rng), N) <= best * (1 + 1e-6)

    def test_noiseless_pair_has_no_noise_maximizer(self):
        A = np.ones((GRID.n_points, 1), complex)
        F, G = maximize_linear(np.zeros_like(A), _classes()["D0-1"], None, A, GRID)
        assert G is None and project_membership(_classes()["D0-1"], F)["member"]


class TestSaddle:
    def test_singleton_classes(self):
        F = Lorentzian.scalar(2.0, 1.0).sample(GRID)
        G = WHITE
        S = MissingSet(((-1.0, 0.0),), 0.25)
        a = WeightFunction.constant(S)
        sp = saddle_iterate(F, G, singleton(F), singleton(G), a, S, GRID)
        est = estimate(F, G, S, a, GRID)
        assert sp.iterations == 1 and sp.gap == 0.0
        assert np.array_equal(sp.F0.samples, F.samples) and np.array_equal(sp.G0.samples, G.samples)
        np.testing.assert_allclose(sp.h0, est.h, rtol=0, atol=1e-14)

    def test_initial_non_member_is_rejected(self, toy):
        with pytest.raises(InfeasibleClass):
            saddle_iterate(WHITE.scale(2.0), WHITE, toy.D_F, toy.D_G, toy.a, toy.S, GRID)

    def test_central_member_belongs(self, toy):
        for D in (toy.D_F, toy.D_G, *_classes().values()):
            if D.family == "D2delta":
                continue
            assert project_membership(D, central_member(D, GRID))["member"]

    @pytest.mark.slow
    def test_trace_is_monotone(self, toy_saddle):
        deltas = np.array([t["delta"] for t in toy_saddle.trace])
        assert np.all(np.diff(deltas) >= 0)
        certified = np.array([t["certified_gap"] for t in toy_saddle.trace])
        assert np.all(np.diff(certified) <= 0)

    @pytest.mark.slow
    def test_saddle_inequalities(self, toy, toy_saddle):
        sp = toy_saddle
        assert sp.probe_gap <= 0.0
        rng = np.random.default_rng(5)
        # admissible estimates only use observations at lattice times off the missing set
        times = np.arange(-16, 13) * 0.25
        times = times[~toy.S.contains(times)]
        basis = np.exp(1j * np.outer(GRID.nodes, times))
        for _ in range(10):
            pert = basis @ (0.05 * rng.standard_normal(times.size))
            h = sp.h0 + pert[:, None]
            assert cross_mse(h, sp.F0, sp.G0, sp.A) >= sp.delta0 - 1e-4

    @pytest.mark.slow
    def test_least_favorable_structure(self, toy, toy_saddle):
        sp = toy_saddle
        assert project_membership(toy.D_F, sp.F0)["member"]
        assert project_membership(toy.D_G, sp.G0)["member"]
        # at the saddle the signal concentrates at low frequencies
        lay = toy.D_F.layout(GRID)
        tau = lay.average(sp.F0.trace())
        assert tau[:4].sum() > tau[8:].sum()
        np.testing.assert_allclose(sp.delta0, 0.624253, atol=2e-4)


class TestKKT:
    def test_constant_modulus_noiseless_fit(self):
        F = Lorentzian.scalar(2.0, 1.0).sample(GRID)
        C = (0.7 * np.exp(0.3j * GRID.nodes))[:, None] * F.samples[:, :, 0]
        A = np.ones((GRID.n_points, 1), complex)
        sp = SaddlePoint(F, None, np.zeros_like(A), C, A, 0.0, 1, 0.0, 0.0, D_F=singleton(F))
        kkt = kkt_residuals(sp)
        assert kkt.residuals["signal"] <= 1e-6
        assert kkt.relations["signal"].multipliers["alpha2"] == pytest.approx(0.49)

    @pytest.mark.slow
    def test_toy_relations(self, toy_saddle):
        kkt = kkt_residuals(toy_saddle, 1)
        assert kkt.max_residual <= 5e-2
        noise = kkt.relations["noise"]
        assert noise.multipliers["beta2"] > 0
        report = kkt.to_dict()
        assert set(report) >= {"residuals", "multipliers", "slackness"}

    def test_pair_mismatch(self, toy):
        F = central_member(toy.D_F, GRID)
        sp = SaddlePoint(F, WHITE, np.zeros((GRID.n_points, 1)), np.zeros((GRID.n_points, 1)),
                         np.ones((GRID.n_points, 1)), 0.0, 1, 0.0, 0.0, D_F=toy.D_F, D_G=toy.D_G)
        with pytest.raises(ModelError):
            kkt_residuals(sp, 5)

    def test_ball_equalities(self):
        D = DensityClass("D2delta-1", 1, {"delta": 0.1}, {"G1": WHITE})
        assert ball_equalities(D, WHITE)["defect"] == pytest.approx(1.0)
        bump = np.zeros(GRID.n_points)
        bump[GRID.center] = 1.0
        scale = np.sqrt(0.1 * 2 * np.pi / GRID.weights[GRID.center])
        out = ball_equalities(D, WHITE + SpectralDensity.scalar(GRID, scale * bump))
        assert out["defect"] == pytest.approx(0.0, abs=1e-12)
