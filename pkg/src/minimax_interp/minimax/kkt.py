"""Optimality relations for least favorable pairs, evaluated as residuals.

Each relation reads ``r^* r = (F+G) M(lambda) (F+G)`` where ``r`` is the row
vector ``A^T G + C^T`` (signal class) or ``A^T F - C^T`` (noise class) and
``M`` is the class-specific multiplier matrix.  Multiplying by ``(F+G)^{-1}``
on both sides gives ``N = M`` with ``N`` the gradient weight of the
cross-evaluated error, so multipliers are fitted to bin averages of ``N``,
the quantity the binned optimizer equalizes.  Per-frequency residuals of the
unreduced relation are reported alongside.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..densities import SpectralDensity
from ..errors import ModelError
from ..grids import FrequencyGrid
from .classes import BinLayout, DensityClass, inner

ACTIVE_RTOL = 1e-2

PAIRS = {
    1: ("D0-1", "Deps-1"), 2: ("D0-2", "Deps-2"), 3: ("D0-3", "Deps-3"), 4: ("D0-4", "Deps-4"),
    5: ("DVU-1", "D2delta-1"), 6: ("DVU-2", "D2delta-2"), 7: ("DVU-3", "D2delta-3"), 8: ("DVU-4", "D2delta-4"),
}


@dataclass
class RelationResult:
    kind: str
    residual: float  # max over considered bins, relative to the largest target
    bin_residuals: np.ndarray
    per_frequency: np.ndarray  # ||r^* r - (F+G) M (F+G)|| at each node
    multipliers: dict
    slackness: dict
    considered_bins: list

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "residual": self.residual,
            "max_per_frequency": float(np.max(self.per_frequency, initial=0.0)),
            "multipliers": _plain(self.multipliers),
            "slackness": _plain(self.slackness),
            "considered_bins": [int(b) for b in self.considered_bins],
        }


@dataclass
class KKTResiduals:
    pair: int | None
    relations: dict  # "signal", "noise" and for Deps-1 also "noise_literal"
    ball: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def residuals(self) -> dict:
        return {name: rel.residual for name, rel in self.relations.items()}

    @property
    def max_residual(self) -> float:
        keys = [k for k in self.relations if k != "noise_literal"]
        return max((self.relations[k].residual for k in keys), default=0.0)

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "residuals": self.residuals,
            "multipliers": {k: _plain(v.multipliers) for k, v in self.relations.items()},
            "slackness": {k: _plain(v.slackness) for k, v in self.relations.items()},
            "ball": _plain(self.ball),
            "relations": {k: v.to_dict() for k, v in self.relations.items()},
            "notes": list(self.notes),
        }


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return {"re": np.real(x).tolist(), "im": np.imag(x).tolist()}
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


# ---------------------------------------------------------------------------
# relation-side helpers


def _herm(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))


def relation_rows(A: np.ndarray, C: np.ndarray, F: np.ndarray, G: np.ndarray):
    """Row vectors ``A^T G + C^T`` and ``A^T F - C^T`` per frequency."""
    r_signal = np.einsum("ni,nij->nj", A, G) + C
    r_noise = np.einsum("ni,nij->nj", A, F) - C
    return r_signal, r_noise


def outer_rows(r: np.ndarray) -> np.ndarray:
    """``r^* r`` for a row vector ``r`` at each frequency."""
    return np.einsum("ni,nj->nij", np.conj(r), r)


def reduced_weight(lhs: np.ndarray, FG: np.ndarray) -> np.ndarray:
    """``(F+G)^{-1} lhs (F+G)^{-1}``."""
    P = np.linalg.inv(FG)
    return _herm(P @ lhs @ P)


def _scalar_view(kind_index: int, X: np.ndarray, B: np.ndarray | None):
    """Per-bin constrained quantity: trace, diagonal, ``<B, X>`` or the matrix."""
    if kind_index == 1:
        return np.real(np.trace(X, axis1=1, axis2=2))
    if kind_index == 2:
        return np.real(np.diagonal(X, axis1=1, axis2=2))
    if kind_index == 3:
        return inner(B, X)
    return X


def _fraction_active(excess: np.ndarray) -> np.ndarray:
    """Bins whose excess over the bound is a non-negligible share of the largest one."""
    top = float(np.max(excess, initial=0.0))
    if top <= 0:
        return np.zeros(excess.shape, dtype=bool)
    return excess >= ACTIVE_RTOL * top


def _structure(kind_index: int, T: int, B: np.ndarray | None) -> np.ndarray:
    if kind_index == 3:
        return B.T
    return np.eye(T)


def _project(kind_index: int, Nb: np.ndarray, B: np.ndarray | None) -> np.ndarray:
    """Least-squares coefficient of each bin matrix along the relation's structure."""
    T = Nb.shape[-1]
    if kind_index == 1:
        return np.real(np.trace(Nb, axis1=1, axis2=2)) / T
    if kind_index == 2:
        return np.real(np.diagonal(Nb, axis1=1, axis2=2))
    if kind_index == 3:
        S = B.T
        return inner(S, Nb) / float(np.real(np.vdot(S, S)))
    raise ValueError(kind_index)


def _target(kind_index: int, coeff: np.ndarray, T: int, B: np.ndarray | None) -> np.ndarray:
    if kind_index == 2:
        return np.einsum("bk,kl->bkl", coeff, np.eye(T))
    return coeff[:, None, None] * _structure(kind_index, T, B)[None]


def _rank_one(M: np.ndarray):
    ev, V = np.linalg.eigh(_herm(M))
    vec = np.sqrt(max(ev[-1], 0.0)) * V[:, -1]
    return vec, np.outer(vec, np.conj(vec))


def _relative(bin_res: np.ndarray, targets: np.ndarray, idx: np.ndarray) -> tuple[float, np.ndarray]:
    res = np.linalg.norm(bin_res, axis=(1, 2))
    scale = float(np.max(np.linalg.norm(targets[idx], axis=(1, 2)), initial=0.0)) if idx.size else 0.0
    if scale == 0:
        scale = max(float(np.max(np.linalg.norm(targets, axis=(1, 2)), initial=0.0)), 1e-300)
    rel = res / scale
    return float(np.max(rel[idx], initial=0.0)), rel


# ---------------------------------------------------------------------------
# per-family evaluators; each returns (targets per bin, considered bins, multipliers, slackness)


def _moment(k: int, Nb: np.ndarray, Xb: np.ndarray, B: np.ndarray | None):
    T = Nb.shape[-1]
    view = _scalar_view(k, Xb, B)
    if k == 4:
        active = _fraction_active(np.real(np.trace(Xb, axis1=1, axis2=2)))
        idx = np.flatnonzero(active)
        vec, M = _rank_one(Nb[idx].mean(axis=0)) if idx.size else (np.zeros(T), np.zeros((T, T)))
        targets = np.where(active[:, None, None], M[None], Nb)
        excess = [float(np.linalg.eigvalsh(_herm(Nb[b] - M))[-1]) for b in np.flatnonzero(~active)]
        return targets, idx, {"alpha": vec}, {"inactive_excess": max(excess, default=0.0)}
    coeff = _project(k, Nb, B)
    if k == 2:
        active = np.column_stack([_fraction_active(view[:, j]) for j in range(T)])
        alpha2 = np.array([coeff[active[:, j], j].mean() if active[:, j].any() else 0.0 for j in range(T)])
        fitted = np.where(active, alpha2[None, :], coeff)
        targets = _target(2, fitted, T, B)
        excess = np.where(~active, coeff - alpha2[None, :], -np.inf)
        idx = np.flatnonzero(active.any(axis=1))
        return targets, idx, {"alpha2": alpha2}, {"inactive_excess": float(max(np.max(excess), 0.0))}
    active = _fraction_active(view)
    idx = np.flatnonzero(active)
    alpha2 = float(coeff[idx].mean()) if idx.size else 0.0
    targets = _target(k, np.where(active, alpha2, coeff), T, B)
    excess = float(np.max(np.where(~active, coeff - alpha2, -np.inf), initial=-np.inf))
    return targets, idx, {"alpha2": alpha2}, {"inactive_excess": max(excess, 0.0)}


def _one_sided(k: int, Nb: np.ndarray, free: np.ndarray, bound: np.ndarray, B: np.ndarray | None,
               sign: float):
    """Fit the base multiplier on ``free`` bins; ``bound`` bins carry a signed extra term.

    ``sign = -1`` requires the extra term to be non-positive, ``+1`` non-negative.
    Returns targets, base multiplier, extra terms and the sign defect.
    """
    T = Nb.shape[-1]
    if k == 4:
        idx = np.flatnonzero(free.any(axis=1) if free.ndim > 1 else free)
        vec, M = _rank_one(Nb[idx].mean(axis=0)) if idx.size else (np.zeros(T), np.zeros((T, T)))
        extra = _herm(Nb - M[None])
        defect = 0.0
        targets = np.empty_like(Nb)
        for b in range(Nb.shape[0]):
            if bound[b]:
                ev = np.linalg.eigvalsh(extra[b])
                defect = max(defect, float(ev[-1] if sign < 0 else -ev[0]))
                targets[b] = Nb[b]
            else:
                targets[b] = M
        return targets, vec, extra, max(defect, 0.0)
    coeff = _project(k, Nb, B)
    if k == 2:
        base = np.array([coeff[free[:, j], j].mean() if free[:, j].any() else np.nan for j in range(T)])
        extra = np.where(bound, coeff - base[None, :], 0.0)
        fitted = np.where(bound, coeff, base[None, :])
    else:
        sel = np.flatnonzero(free)
        base = float(coeff[sel].mean()) if sel.size else np.nan
        extra = np.where(bound, coeff - base, 0.0)
        fitted = np.where(bound, coeff, base)
    extra = np.nan_to_num(extra)
    fitted = np.nan_to_num(fitted)
    defect = float(np.max(sign * -extra, initial=0.0)) if np.size(extra) else 0.0
    return _target(k, fitted, T, B), base, extra, max(defect, 0.0)


def _contamination(k: int, Nb: np.ndarray, Gb: np.ndarray, G1b: np.ndarray, other_b: np.ndarray,
                   eps: float, B: np.ndarray | None, variant: str):
    """``N = (beta^2 + gamma) S`` with ``gamma <= 0``, ``gamma = 0`` where the bound is slack.

    ``variant="own"`` tests slackness on the noise density itself; ``"literal"``
    tests the signal density against the same bound.
    """
    subject = Gb if variant == "own" else other_b
    floor = (1 - eps) * G1b
    if k == 4:
        excess = np.array([np.linalg.eigvalsh(_herm(s - f))[0] for s, f in zip(subject, floor)])
        slack = _fraction_active(excess)
    else:
        excess = _scalar_view(k, subject, B) - _scalar_view(k, floor, B)
        if k == 2:
            slack = np.column_stack([_fraction_active(excess[:, j]) for j in range(excess.shape[1])])
        else:
            slack = _fraction_active(excess)
    targets, base, extra, defect = _one_sided(k, Nb, slack, ~slack, B, -1.0)
    name = {1: "beta2", 2: "beta2", 3: "beta2", 4: "beta"}[k]
    gamma = {1: "gamma", 2: "gamma_k", 3: "gamma_prime", 4: "Gamma"}[k]
    slackness = {f"{gamma}_sign_defect": defect, "slack_bins": np.flatnonzero(
        slack.any(axis=1) if slack.ndim > 1 else slack)}
    if k == 4:
        slackness[gamma] = np.array([np.linalg.eigvalsh(e)[-1] for e in extra])
    else:
        slackness[gamma] = extra
    return targets, np.arange(Nb.shape[0]), {name: base}, slackness


def _strip(k: int, Nb: np.ndarray, Fb: np.ndarray, Vb: np.ndarray, Ub: np.ndarray, B: np.ndarray | None):
    """``N = (alpha^2 + gamma_1 + gamma_2) S``; ``gamma_1 <= 0`` at ``V``, ``gamma_2 >= 0`` at ``U``."""
    if k == 4:
        lo = np.array([np.linalg.eigvalsh(_herm(f - v))[0] for f, v in zip(Fb, Vb)])
        hi = np.array([np.linalg.eigvalsh(_herm(u - f))[0] for f, u in zip(Fb, Ub)])
        width = np.array([np.linalg.eigvalsh(_herm(u - v))[-1] for u, v in zip(Ub, Vb)])
    else:
        x, v, u = (_scalar_view(k, M, B) for M in (Fb, Vb, Ub))
        lo, hi, width = x - v, u - x, u - v
    at_lower = lo <= ACTIVE_RTOL * width
    at_upper = (hi <= ACTIVE_RTOL * width) & ~at_lower
    free = ~(at_lower | at_upper)
    T = Nb.shape[-1]
    targets, base, extra1, d1 = _one_sided(k, Nb, free, at_lower, B, -1.0)
    _, _, extra2, d2 = _one_sided(k, Nb, free, at_upper, B, +1.0)
    if k == 4:
        targets = np.where((at_lower | at_upper)[:, None, None], Nb, targets)
        g1 = np.array([np.linalg.eigvalsh(e)[-1] if lo_b else 0.0 for e, lo_b in zip(extra1, at_lower)])
        g2 = np.array([np.linalg.eigvalsh(e)[0] if up_b else 0.0 for e, up_b in zip(extra2, at_upper)])
    else:
        g1, g2 = extra1, extra2
        fitted = np.where(free, np.nan_to_num(base), _project(k, Nb, B))
        targets = _target(k, fitted, T, B)
    name = {1: "alpha2", 2: "alpha2", 3: "alpha2", 4: "alpha"}[k]
    suffix = {1: "", 2: "_k", 3: "_prime", 4: ""}[k]
    g_lo = "Gamma_1" if k == 4 else f"gamma_1{suffix}"
    g_hi = "Gamma_2" if k == 4 else f"gamma_2{suffix}"
    slackness = {g_lo: g1, g_hi: g2, f"{g_lo}_sign_defect": d1, f"{g_hi}_sign_defect": d2,
                 "lower_bins": np.flatnonzero(at_lower.any(axis=1) if at_lower.ndim > 1 else at_lower),
                 "upper_bins": np.flatnonzero(at_upper.any(axis=1) if at_upper.ndim > 1 else at_upper)}
    return targets, np.arange(Nb.shape[0]), {name: base}, slackness


def _ball(k: int, Nb: np.ndarray, Gb: np.ndarray, G1b: np.ndarray, B: np.ndarray | None):
    """``N = beta^2 t S`` with ``t`` the deviation from the ball centre."""
    T = Nb.shape[-1]
    D = Gb - G1b
    if k == 4:
        num = np.real(np.sum(np.conj(D) * Nb, axis=0))
        den = np.sum(np.abs(D) ** 2, axis=0)
        beta = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        targets = beta[None] * D
        return targets, np.arange(Nb.shape[0]), {"beta_ij": beta}, {"beta_sign_defect": 0.0}
    if k == 2:
        t = np.real(np.diagonal(D, axis1=1, axis2=2))
        n = np.real(np.diagonal(Nb, axis1=1, axis2=2))
        den = np.sum(t**2, axis=0)
        beta2 = np.where(den > 0, np.sum(t * n, axis=0) / np.where(den > 0, den, 1.0), 0.0)
        targets = _target(2, beta2[None, :] * t, T, B)
        return targets, np.arange(Nb.shape[0]), {"beta2": beta2}, {
            "beta_sign_defect": float(max(0.0, -np.min(beta2)))}
    t = np.real(np.trace(D, axis1=1, axis2=2)) if k == 1 else inner(B, D)
    n = np.real(np.trace(Nb, axis1=1, axis2=2)) / T
    den = float(np.sum(t**2))
    beta2 = float(np.sum(t * n) / den) if den > 0 else 0.0
    targets = (beta2 * t)[:, None, None] * np.eye(T)[None]
    return targets, np.arange(Nb.shape[0]), {"beta2": beta2}, {"beta_sign_defect": max(0.0, -beta2)}


def ball_equalities(D: DensityClass, G: SpectralDensity) -> dict:
    """Relative defect of each ball-radius equality, by quadrature over the grid."""
    grid = G.grid
    diff = G.samples - D.ref("G1", grid).samples
    p = D.params
    k = D.index
    if k == 1:
        dev = np.real(np.trace(diff, axis1=1, axis2=2))
        radius = p["delta"]
    elif k == 2:
        dev = np.real(np.diagonal(diff, axis1=1, axis2=2))
        radius = p["delta_k"]
    elif k == 3:
        dev = inner(p["B2"], diff)
        radius = p["delta"]
    else:
        dev = diff
        radius = p["delta_ij"]
    w = grid.weights.reshape((-1,) + (1,) * (np.ndim(dev) - 1))
    value = np.sum(w * np.abs(dev) ** 2, axis=0) / (2 * np.pi)
    defect = np.abs(value - radius) / np.asarray(radius)
    return {"value": value, "radius": radius, "defect": float(np.max(defect))}


# ---------------------------------------------------------------------------


def _evaluate(D: DensityClass, lay: BinLayout, lhs: np.ndarray, FG: np.ndarray, X: SpectralDensity,
              other: SpectralDensity) -> RelationResult:
    N = reduced_weight(lhs, FG)
    Nb = _herm(lay.average(N))
    Xb = lay.average(X.samples)
    fam, k = D.family, D.index
    p = D.params
    grid = X.grid
    if fam == "D0":
        targets, idx, mult, slack = _moment(k, Nb, Xb, p.get("B1"))
    elif fam == "Deps":
        G1b = lay.average(D.ref("G1", grid).samples)
        targets, idx, mult, slack = _contamination(k, Nb, Xb, G1b, lay.average(other.samples), p["eps"],
                                                   p.get("B2"), "own")
    elif fam == "DVU":
        Vb, Ub = lay.average(D.ref("V", grid).samples), lay.average(D.ref("U", grid).samples)
        targets, idx, mult, slack = _strip(k, Nb, Xb, Vb, Ub, p.get("B1"))
    elif fam == "D2delta":
        G1b = lay.average(D.ref("G1", grid).samples)
        targets, idx, mult, slack = _ball(k, Nb, Xb, G1b, p.get("B2"))
    else:
        raise ModelError(f"no relation for class kind {D.kind}")
    rel, _ = _relative(Nb - targets, targets, idx)
    M_nodes = lay.expand(targets)
    per_freq = np.linalg.norm(lhs - FG @ M_nodes @ FG, axis=(1, 2))
    return RelationResult(D.kind, rel, np.linalg.norm(Nb - targets, axis=(1, 2)), per_freq, mult, slack,
                          list(idx))


def kkt_residuals(sp, pair: int | None = None, D_F: DensityClass | None = None,
                  D_G: DensityClass | None = None) -> KKTResiduals:
    """Evaluate the optimality relations of the class pair at a saddle point.

    Classes default to those stored on ``sp``.  Without a noise class (or with
    ``sp.G0 is None``) only the signal relation is evaluated with ``G = 0``.
    """
    D_F = sp.D_F if D_F is None else D_F
    D_G = sp.D_G if D_G is None else D_G
    notes = []
    if pair is not None:
        if pair not in PAIRS:
            raise ModelError(f"pair must be one of {sorted(PAIRS)}, got {pair}")
        want_F, want_G = PAIRS[pair]
        if D_F is not None and D_F.kind not in (want_F, "singleton"):
            raise ModelError(f"pair {pair} expects a {want_F} signal class, got {D_F.kind}")
        if D_G is not None and D_G.kind not in (want_G, "singleton"):
            raise ModelError(f"pair {pair} expects a {want_G} noise class, got {D_G.kind}")
    F = sp.F0
    grid: FrequencyGrid = F.grid
    noiseless = sp.G0 is None or D_G is None
    G = SpectralDensity.zeros(grid, F.dim) if sp.G0 is None else sp.G0
    r_signal, r_noise = relation_rows(sp.A, sp.C0, F.samples, G.samples)
    FG = F.samples + G.samples
    relations = {}
    ball = {}
    # a singleton has no free multipliers; its relation is read as the moment one with p = its integral
    if D_F is not None:
        DF_eval = D_F if D_F.kind != "singleton" else _as_moment(D_F, F)
        relations["signal"] = _evaluate(DF_eval, DF_eval.layout(grid), outer_rows(r_signal), FG, F, G)
    if not noiseless:
        DG_eval = D_G if D_G.kind != "singleton" else _as_moment(D_G, G)
        lay = DG_eval.layout(grid)
        relations["noise"] = _evaluate(DG_eval, lay, outer_rows(r_noise), FG, G, F)
        if DG_eval.kind == "Deps-1":
            N = reduced_weight(outer_rows(r_noise), FG)
            Nb = _herm(lay.average(N))
            G1b = lay.average(DG_eval.ref("G1", grid).samples)
            targets, idx, mult, slack = _contamination(1, Nb, lay.average(G.samples), G1b,
                                                       lay.average(F.samples), DG_eval.params["eps"], None,
                                                       "literal")
            rel, _ = _relative(Nb - targets, targets, idx)
            per_freq = np.linalg.norm(outer_rows(r_noise) - FG @ lay.expand(targets) @ FG, axis=(1, 2))
            relations["noise_literal"] = RelationResult(
                "Deps-1", rel, np.linalg.norm(Nb - targets, axis=(1, 2)), per_freq, mult, slack, list(idx))
            notes.append("noise_literal tests slackness on the signal trace against the contamination floor")
        if DG_eval.kind.endswith("-4") and DG_eval.family == "Deps":
            notes.append("slackness of the fourth contamination relation is applied to Gamma")
        if DG_eval.family == "D2delta":
            ball = ball_equalities(DG_eval, G)
    return KKTResiduals(pair, relations, ball, notes)


def _as_moment(D: DensityClass, X: SpectralDensity) -> DensityClass:
    total = float(np.sum(X.grid.weights * X.trace()) / (2 * np.pi))
    return DensityClass("D0-1", D.dim, {"p": max(total, 1e-300)}, bins=D.bins)
