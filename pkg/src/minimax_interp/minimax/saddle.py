"""Conditional-gradient search for least favorable densities.

The optimal error ``Delta(F, G) = min_h Delta(h; F, G)`` is concave in
``(F, G)`` and its gradient is the pair of weight matrices of the
cross-evaluated error at the current optimal ``h``.  Each step moves towards
the class maximizer of that linear functional with step ``2 / (k + 2)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..densities import SpectralDensity
from ..errors import InfeasibleClass, MinimalityLost, SingularDensity, Stalled
from ..estimator import cross_mse, estimate
from ..grids import FrequencyGrid, MissingSet, WeightFunction
from ..spectral import exponential_transform
from .classes import DensityClass, project_membership, random_member
from .lmo import maximize_linear

log = logging.getLogger(__name__)

STALL_WINDOW = 50
MAX_HALVINGS = 30


@dataclass
class SaddlePoint:
    F0: SpectralDensity
    G0: SpectralDensity | None
    h0: np.ndarray
    C0: np.ndarray
    A: np.ndarray
    delta0: float
    iterations: int
    gap: float
    probe_gap: float
    trace: list = field(default_factory=list, repr=False)
    D_F: DensityClass | None = field(default=None, repr=False)
    D_G: DensityClass | None = field(default=None, repr=False)
    kkt: object = None
    solution: object = field(default=None, repr=False)  # EstimateSolution at (F0, G0)

    def to_dict(self) -> dict:
        out = {
            "delta0": self.delta0,
            "gap": self.gap,
            "probe_gap": self.probe_gap,
            "iterations": self.iterations,
        }
        if self.kkt is not None:
            out["kkt"] = self.kkt.to_dict()
        return out


def _member_or_raise(D: DensityClass, X: SpectralDensity, name: str):
    rep = project_membership(D, X)
    if not rep["member"]:
        raise InfeasibleClass(f"initial {name} is not a member of {D.kind}: {rep['violations']}")


def verify_saddle(h0: np.ndarray, delta0: float, D_F: DensityClass, D_G: DensityClass | None,
                  A: np.ndarray, grid: FrequencyGrid, n_probes: int = 32, seed: int = 0) -> float:
    """Largest ``Delta(h0; F, G) - delta0`` over random class members."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    zero = SpectralDensity.zeros(grid, D_F.dim)
    for _ in range(n_probes):
        F = random_member(D_F, grid, rng)
        G = zero if D_G is None else random_member(D_G, grid, rng)
        worst = max(worst, cross_mse(h0, F, G, A, grid) - delta0)
    return float(worst)


def pair_point(F: SpectralDensity, G: SpectralDensity | None, D_F: DensityClass, D_G: DensityClass | None,
               a: WeightFunction, S: MissingSet, grid: FrequencyGrid, tikhonov: float | None = None) -> SaddlePoint:
    """Package an arbitrary pair like a saddle point, with its one-step gap.

    Useful for contrasting optimality diagnostics at non-optimal members.
    """
    F = F.resample(grid)
    noiseless = D_G is None
    G_eval = SpectralDensity.zeros(grid, F.dim) if noiseless else G.resample(grid)
    if a.S != S:
        a = a.resample(S)
    est = estimate(F, G_eval, S, a, grid, mode="noiseless" if noiseless else "noisy", tikhonov=tikhonov)
    Fs, Gs = maximize_linear(est.h, D_F, D_G, est.A, grid)
    gap = cross_mse(est.h, Fs, G_eval if noiseless else Gs, est.A, grid) - est.delta
    return SaddlePoint(F, None if noiseless else G_eval, est.h, est.C, est.A, est.delta, 0, float(gap),
                       float("nan"), [], D_F, D_G, solution=est)


def saddle_iterate(F_init: SpectralDensity, G_init: SpectralDensity | None, D_F: DensityClass,
                   D_G: DensityClass | None, a: WeightFunction, S: MissingSet, grid: FrequencyGrid,
                   tol: float = 1e-4, max_iter: int = 20000, tikhonov: float | None = None,
                   n_probes: int = 32, seed: int = 0, stall_window: int = STALL_WINDOW) -> SaddlePoint:
    """Least favorable pair and the minimax characteristic.

    ``D_G = None`` means observations without noise.  Raises :class:`Stalled`
    when the best gap has not improved for ``stall_window`` iterations while
    still above ``tol``.
    """
    F = F_init.resample(grid)
    _member_or_raise(D_F, F, "F")
    noiseless = D_G is None
    if noiseless:
        G = SpectralDensity.zeros(grid, F.dim)
    else:
        G = G_init.resample(grid)
        _member_or_raise(D_G, G, "G")
    if a.S != S:
        a = a.resample(S)
    A = exponential_transform(a, S, grid)
    mode = "noiseless" if noiseless else "noisy"

    def solve(F, G, k):
        try:
            return estimate(F, G, S, a, grid, mode=mode, tikhonov=tikhonov)
        except SingularDensity as exc:
            raise MinimalityLost(f"iterate {k}: F + G became singular", exc.diagnostics) from exc

    est = solve(F, G, 0)
    best = None
    certified = np.inf
    lowest_upper = np.inf
    history = []
    trace = []
    halvings = 0
    for k in range(1, max_iter + 1):
        Fs, Gs = maximize_linear(est.h, D_F, D_G, A, grid)
        upper = cross_mse(est.h, Fs, G if noiseless else Gs, A, grid)
        gap = upper - est.delta
        lowest_upper = min(lowest_upper, upper)
        certified = min(certified, lowest_upper - est.delta)
        history.append(certified)
        trace.append({"iteration": k, "delta": est.delta, "gap": gap, "certified_gap": certified})
        if best is None or gap < best[0]:
            best = (gap, k, F, G, est)
        if gap <= tol:
            break
        if len(history) > stall_window and not history[-1] < history[-1 - stall_window]:
            raise Stalled(
                f"certified gap {certified:.3g} has not decreased in {stall_window} iterations",
                {"certified_gap": certified, "best_gap": best[0], "best_iteration": best[1],
                 "iteration": k, "tol": tol},
            )
        # the nominal step is halved until the optimal error does not decrease
        step = 2.0 / (k + 2)
        for _ in range(MAX_HALVINGS):
            F_new = F.combine(Fs, step)
            G_new = G if noiseless else G.combine(Gs, step)
            est_new = solve(F_new, G_new, k)
            if est_new.delta >= est.delta:
                F, G, est = F_new, G_new, est_new
                break
            step *= 0.5
            halvings += 1
    gap, k_best, F, G, est = best
    probe = verify_saddle(est.h, est.delta, D_F, D_G, A, grid, n_probes, seed)
    log.info("saddle search: %d iterations (%d step halvings), gap %.3g, probe gap %.3g",
             len(trace), halvings, gap, probe)
    return SaddlePoint(F, None if noiseless else G, est.h, est.C, A, est.delta, len(trace), float(gap),
                       probe, trace, D_F, D_G, solution=est)
