"""Maximizing the cross-evaluated error over a class for a fixed characteristic.

For fixed ``h0`` the error is linear in the densities,

    cross_mse(h0; F, G) = sum_j m_j [tr(F_j N_F,j) + tr(G_j N_G,j)]

with ``N_F = conj(A - h0)(A - h0)^T`` and ``N_G = conj(h0) h0^T``, so each
density is chosen independently as a maximizer of a linear functional.
"""
from __future__ import annotations

import numpy as np

from ..densities import SpectralDensity
from ..errors import ModelError, UnsupportedClass
from ..estimator import cross_weights
from ..grids import FrequencyGrid
from .classes import BinnedBounds, DensityClass, binned_bounds

TIE_RTOL = 1e-12


def _order(scores: np.ndarray) -> np.ndarray:
    """Bins by descending score; near-ties resolved towards the lowest frequency."""
    top = float(np.max(np.abs(scores), initial=0.0))
    key = np.round(scores / (TIE_RTOL * top)) if top > 0 else np.zeros_like(scores)
    return np.lexsort((np.arange(scores.size), -key))


def _degenerate(scores: np.ndarray) -> bool:
    top = float(np.max(np.abs(scores), initial=0.0))
    return top == 0 or float(np.ptp(scores)) <= TIE_RTOL * top


def allocate(bb: BinnedBounds, scores: np.ndarray) -> np.ndarray:
    """Per-bin ``tau`` maximizing ``sum_b m_b tau_b scores_b`` under the bin constraints."""
    m = bb.layout.measure
    scores = np.asarray(scores, dtype=float)
    if bb.budget is None:
        norm = float(np.sqrt(m @ scores**2))
        if norm == 0:
            return bb.center.copy()
        return bb.center + np.sqrt(max(bb.radius, 0.0)) * scores / norm
    tau = bb.lower.astype(float).copy()
    remaining = bb.budget - float(m @ tau)
    if remaining <= 0:
        return tau
    room = bb.upper - bb.lower
    if _degenerate(scores):
        if np.all(np.isinf(room)):
            return tau + remaining / float(m.sum())
        cap = float(m @ np.where(np.isinf(room), 0.0, room))
        if np.any(np.isinf(room)) and remaining > cap:
            inf = np.isinf(room)
            tau[~inf] = bb.upper[~inf]
            tau[inf] += (remaining - cap) / float(m[inf].sum())
            return tau
        theta = remaining / cap
        return tau + theta * np.where(np.isinf(room), 0.0, room)
    for b in _order(scores):
        add = min(room[b], remaining / m[b])
        tau[b] += add
        remaining -= add * m[b]
        if remaining <= 0:
            break
    return tau


def _top_eigen(N: np.ndarray):
    ev, V = np.linalg.eigh(0.5 * (N + np.conj(np.swapaxes(N, 1, 2))))
    return np.clip(ev[:, -1], 0.0, None), V[:, :, -1]


def _maximize_trace(D: DensityClass, N: np.ndarray, grid: FrequencyGrid) -> SpectralDensity:
    bb = binned_bounds(D, grid)
    lam, u = _top_eigen(N)
    scores = bb.layout.average(lam)
    tau = allocate(bb, scores)
    X = bb.layout.expand(tau)[:, None, None] * np.einsum("ni,nj->nij", u, np.conj(u))
    return SpectralDensity(grid, X)


def _maximize_diagonal(D: DensityClass, N: np.ndarray, grid: FrequencyGrid) -> SpectralDensity:
    T = D.dim
    if T == 1:
        return _maximize_trace(D, N, grid)
    import cvxpy as cp

    bounds = [binned_bounds(D, grid, k) for k in range(T)]
    lay = bounds[0].layout
    lam, u = _top_eigen(N)
    y = u * np.sqrt(lam)[:, None]  # rank-one factor N ~ y y^H
    mag = np.abs(y)
    C = lay.total(np.einsum("nk,nl->nkl", mag, mag))  # (nb, T, T)
    m = lay.measure

    d = cp.Variable((lay.n_bins, T), nonneg=True)
    terms = [C[:, k, k] @ d[:, k] for k in range(T)]
    for b in range(lay.n_bins):
        for k in range(T):
            for l in range(k + 1, T):
                if C[b, k, l] > 0:
                    terms.append(2 * C[b, k, l] * cp.geo_mean(cp.hstack([d[b, k], d[b, l]])))
    cons = []
    for k, bb in enumerate(bounds):
        if bb.budget is None:
            cons.append(m @ cp.square(d[:, k] - bb.center) <= bb.radius)
        else:
            cons += [m @ d[:, k] == bb.budget, d[:, k] >= bb.lower]
            fin = np.isfinite(bb.upper)
            if np.any(fin):
                cons.append(d[fin, k] <= bb.upper[fin])
    prob = cp.Problem(cp.Maximize(cp.sum(cp.hstack(terms))), cons)
    prob.solve(solver=cp.CLARABEL)
    if d.value is None:
        raise ModelError(f"{D.kind}: diagonal allocation failed ({prob.status})")
    dv = np.clip(np.asarray(d.value), 0.0, None)
    for k, bb in enumerate(bounds):  # clean solver round-off against the box
        dv[:, k] = np.clip(dv[:, k], bb.lower, bb.upper)
    phase = np.where(mag > 0, y / np.where(mag > 0, mag, 1.0), 1.0)
    x = np.sqrt(lay.expand(dv)) * phase
    return SpectralDensity(grid, np.einsum("ni,nj->nij", x, np.conj(x)))


def maximize_class(D: DensityClass, N: np.ndarray, grid: FrequencyGrid) -> SpectralDensity:
    """Member of ``D`` maximizing ``sum_j m_j tr(X_j N_j)``."""
    if D.family == "singleton":
        return D.ref("X", grid)
    if D.index == 1:
        return _maximize_trace(D, N, grid)
    if D.index == 2:
        return _maximize_diagonal(D, N, grid)
    raise UnsupportedClass(f"the optimizer handles kinds 1 and 2 only, not {D.kind}")


def linear_value(X: SpectralDensity, N: np.ndarray) -> float:
    return float(np.real(np.sum(X.grid.weights * np.einsum("nij,nji->n", X.samples, N))) / (2 * np.pi))


def maximize_linear(h0: np.ndarray, D_F: DensityClass, D_G: DensityClass | None, A: np.ndarray,
                    grid: FrequencyGrid):
    """Return ``(F*, G*)``; ``G*`` is ``None`` when ``D_G`` is ``None`` (noiseless)."""
    NF, NG = cross_weights(h0, A)
    Fs = maximize_class(D_F, NF, grid)
    Gs = None if D_G is None else maximize_class(D_G, NG, grid)
    return Fs, Gs


def central_member(D: DensityClass, grid: FrequencyGrid) -> SpectralDensity:
    """Deterministic member used as a default starting point.

    Kind 1 spreads the allocation of a flat score evenly over the identity,
    kind 2 does the same per diagonal entry.
    """
    if D.family == "singleton":
        return D.ref("X", grid)
    T = D.dim
    if D.index == 1:
        bb = binned_bounds(D, grid)
        tau = allocate(bb, np.zeros(bb.layout.n_bins))
        diag = np.repeat(tau[:, None] / T, T, axis=1)
    elif D.index == 2:
        cols = []
        for k in range(T):
            bb = binned_bounds(D, grid, k)
            cols.append(allocate(bb, np.zeros(bb.layout.n_bins)))
        diag = np.stack(cols, axis=1)
    else:
        raise UnsupportedClass(f"the optimizer handles kinds 1 and 2 only, not {D.kind}")
    lay = D.layout(grid)
    per_bin = np.einsum("bk,kl->bkl", diag, np.eye(T)).astype(complex)
    return SpectralDensity(grid, per_bin[lay.labels])
