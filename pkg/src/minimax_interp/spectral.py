"""Exponential transforms over the missing set and the minimality check."""
from __future__ import annotations

import numpy as np

from .densities import SpectralDensity
from .grids import FrequencyGrid, MissingSet, WeightFunction

TAIL_FRACTION = 0.2
TAIL_RATIO = 1e-3


def exponential_transform(a: WeightFunction, S: MissingSet, grid: FrequencyGrid) -> np.ndarray:
    """``sum_l int_{S_l} a(t) e^{i t lambda} dt`` for every grid node, shape ``(n, T)``."""
    if a.S != S:
        a = a.resample(S)
    return transform_values(a.values, S, grid)


def transform_values(values: np.ndarray, S: MissingSet, grid: FrequencyGrid) -> np.ndarray:
    """Quadrature transform of arbitrary (possibly complex) node values ``(m, T)``."""
    wv = np.asarray(values) * S.weights[:, None]
    out = np.empty((grid.n_points, wv.shape[1]), dtype=complex)
    for s in range(0, grid.n_points, 1024):
        ph = np.exp(1j * np.outer(grid.nodes[s:s + 1024], S.nodes))
        out[s:s + 1024] = ph @ wv
    return out


def hermitian_form(left: np.ndarray, M: np.ndarray, right: np.ndarray | None = None) -> np.ndarray:
    """Per-frequency ``left^T M conj(right)``."""
    right = left if right is None else right
    return np.einsum("ni,nij,nj->n", left, M, np.conj(right))


def minimality_check(F_plus_G: SpectralDensity, probe: WeightFunction, S: MissingSet,
                     grid: FrequencyGrid) -> dict:
    """Truncated value of ``int b^T (F+G)^{-1} conj(b)``; flags a non-decaying tail.

    Use unfolded densities and a time step fine enough to resolve the band,
    otherwise the transform ``b`` itself is periodic and never decays.
    """
    P = F_plus_G.resample(grid).inverse()
    b = exponential_transform(probe, S, grid)
    integrand = np.real(hermitian_form(b, P))
    value = float(np.sum(grid.weights * integrand))
    peak = float(np.max(np.abs(integrand), initial=0.0))
    lam = np.abs(grid.nodes)
    tail = lam >= (1 - TAIL_FRACTION) * grid.lambda_max
    tail_mean = float(np.mean(np.abs(integrand[tail])))
    flag = bool(peak > 0 and tail_mean > TAIL_RATIO * peak)
    return {"value": value, "divergence_flag": flag, "tail_mean": tail_mean, "peak": peak}
