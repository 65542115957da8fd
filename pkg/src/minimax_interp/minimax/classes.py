"""Admissible classes of spectral densities and exact membership tests.

Kinds follow a ``family-index`` naming: ``D0-k`` (moment), ``Deps-k``
(epsilon-contamination), ``DVU-k`` (strip) and ``D2delta-k`` (L2 ball), with
``k = 1`` trace, ``2`` per-component, ``3`` weighted by a matrix ``B``,
``4`` full matrix.  ``singleton`` is the one-member class ``{X}``.

The optimizer works on a *binned* subclass: frequencies are grouped by
``|lambda|`` and the constrained scalar (trace for ``k = 1``, each diagonal
entry for ``k = 2``) is held constant within a bin.  With one bin per
``+-lambda`` pair this is the whole class restricted to real-process densities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..densities import SpectralDensity, validate_density
from ..errors import GridMismatch, InfeasibleClass, ModelError, UnsupportedClass
from ..grids import FrequencyGrid

FAMILIES = ("D0", "Deps", "DVU", "D2delta")
KINDS = tuple(f"{f}-{k}" for f in FAMILIES for k in (1, 2, 3, 4)) + ("singleton",)
MEMBER_TOL = 1e-8

_REQUIRED = {
    "D0-1": ("p",), "D0-2": ("p_k",), "D0-3": ("p", "B1"), "D0-4": ("P",),
    "Deps-1": ("q", "eps"), "Deps-2": ("q_k", "eps"), "Deps-3": ("q", "eps", "B2"), "Deps-4": ("Q", "eps"),
    "DVU-1": ("p",), "DVU-2": ("p_k",), "DVU-3": ("p", "B1"), "DVU-4": ("P",),
    "D2delta-1": ("delta",), "D2delta-2": ("delta_k",), "D2delta-3": ("delta", "B2"),
    "D2delta-4": ("delta_ij",), "singleton": (),
}
_REFERENCES = {"Deps": ("G1",), "DVU": ("V", "U"), "D2delta": ("G1",), "singleton": ("X",)}


@dataclass(frozen=True)
class BinLayout:
    """Partition of grid nodes into bins of contiguous ``|lambda|``."""

    grid: FrequencyGrid
    labels: np.ndarray
    n_bins: int

    @classmethod
    def build(cls, grid: FrequencyGrid, n_bins: int | None = None) -> "BinLayout":
        levels = grid.center + 1  # distinct |lambda| values
        n_bins = levels if n_bins is None else int(n_bins)
        if not 1 <= n_bins <= levels:
            raise ModelError(f"bins must be in [1, {levels}], got {n_bins}")
        level = np.abs(np.arange(grid.n_points) - grid.center)
        groups = np.array_split(np.arange(levels), n_bins)
        lookup = np.empty(levels, dtype=int)
        for b, g in enumerate(groups):
            lookup[g] = b
        return cls(grid, lookup[level], n_bins)

    @property
    def measure(self) -> np.ndarray:
        """``m_b = (1/2pi) * sum of quadrature weights in bin b``."""
        return np.bincount(self.labels, self.grid.weights, self.n_bins) / (2 * np.pi)

    def node_measure(self) -> np.ndarray:
        return self.grid.weights / (2 * np.pi)

    def total(self, per_node: np.ndarray) -> np.ndarray:
        """Sum of ``m_j * x_j`` over each bin (leading axis is the node axis)."""
        x = np.asarray(per_node) * self.node_measure().reshape((-1,) + (1,) * (np.ndim(per_node) - 1))
        out = np.zeros((self.n_bins,) + x.shape[1:], dtype=x.dtype)
        np.add.at(out, self.labels, x)
        return out

    def average(self, per_node: np.ndarray) -> np.ndarray:
        m = self.measure
        return self.total(per_node) / m.reshape((-1,) + (1,) * (np.ndim(per_node) - 1))

    def expand(self, per_bin: np.ndarray) -> np.ndarray:
        return np.asarray(per_bin)[self.labels]

    def bin_max(self, per_node: np.ndarray) -> np.ndarray:
        out = np.full(self.n_bins, -np.inf)
        np.maximum.at(out, self.labels, per_node)
        return out

    def bin_min(self, per_node: np.ndarray) -> np.ndarray:
        out = np.full(self.n_bins, np.inf)
        np.minimum.at(out, self.labels, per_node)
        return out


def _herm_pd(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.shape[0] != M.shape[1]:
        raise ModelError(f"{name} must be square")
    if np.linalg.norm(M - M.conj().T) > 1e-10 * max(1.0, np.linalg.norm(M)):
        raise ModelError(f"{name} must be Hermitian")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ModelError(f"{name} must be positive definite")
    return M


def inner(B: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-frequency ``<B, X> = Re tr(B^H X)``."""
    return np.real(np.einsum("ij,nij->n", np.conj(B), X))


@dataclass(frozen=True)
class DensityClass:
    kind: str
    dim: int
    params: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    bins: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown class kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        p = dict(self.params)
        for key in _REQUIRED[self.kind]:
            if key not in p:
                raise ModelError(f"class {self.kind} needs parameter {key!r}")
        T = self.dim
        for key in ("p", "q", "delta"):
            if key in p:
                p[key] = float(p[key])
                if not p[key] > 0:
                    raise ModelError(f"{key} must be positive")
        for key in ("p_k", "q_k", "delta_k"):
            if key in p:
                p[key] = np.asarray(p[key], dtype=float).reshape(-1)
                if p[key].size != T or np.any(p[key] <= 0):
                    raise ModelError(f"{key} must hold {T} positive numbers")
        if "delta_ij" in p:
            p["delta_ij"] = np.asarray(p["delta_ij"], dtype=float).reshape(T, T)
            if np.any(p["delta_ij"] <= 0):
                raise ModelError("delta_ij must be positive")
        if "eps" in p:
            p["eps"] = float(p["eps"])
            if not 0 <= p["eps"] <= 1:
                raise ModelError("eps must lie in [0, 1]")
        for key in ("B1", "B2", "P", "Q"):
            if key in p:
                p[key] = _herm_pd(p[key], key)
                if p[key].shape[0] != T:
                    raise ModelError(f"{key} must be {T}x{T}")
        object.__setattr__(self, "params", p)

        need = _REFERENCES.get(self.family, ())
        refs = dict(self.references)
        for key in need:
            if key not in refs:
                raise ModelError(f"class {self.kind} needs reference density {key!r}")
            if refs[key].dim != T:
                raise ModelError(f"reference {key} has dimension {refs[key].dim}, class has {T}")
        if self.family == "DVU":
            V, U = refs["V"], refs["U"].resample(refs["V"].grid)
            ev = np.linalg.eigvalsh(U.samples - V.samples)[:, 0]
            if np.any(ev < -MEMBER_TOL * max(1.0, U.max_norm())):
                raise ModelError("strip bounds must satisfy V <= U at every frequency")
        object.__setattr__(self, "references", refs)

    @property
    def family(self) -> str:
        return self.kind.split("-")[0] if self.kind != "singleton" else "singleton"

    @property
    def index(self) -> int:
        return int(self.kind.split("-")[1]) if self.kind != "singleton" else 0

    def ref(self, key: str, grid: FrequencyGrid) -> SpectralDensity:
        return self.references[key].resample(grid)

    def layout(self, grid: FrequencyGrid) -> BinLayout:
        return BinLayout.build(grid, self.bins)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "bins": self.bins}
        out["params"] = {k: _jsonable(v) for k, v in self.params.items()}
        return out


def _jsonable(v):
    if isinstance(v, np.ndarray):
        if np.iscomplexobj(v):
            return [[float(x.real), float(x.imag)] for x in v.reshape(-1)] if np.any(v.imag) \
                else np.real(v).tolist()
        return v.tolist()
    return v


def singleton(X: SpectralDensity) -> DensityClass:
    return DensityClass("singleton", X.dim, references={"X": X})


# ---------------------------------------------------------------------------
# membership


def _integral(x: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    w = grid.weights.reshape((-1,) + (1,) * (x.ndim - 1))
    return np.sum(w * x, axis=0) / (2 * np.pi)


def _rel(value, target) -> float:
    value, target = np.asarray(value), np.asarray(target)
    scale = max(float(np.max(np.abs(target))), 1e-300)
    return float(np.max(np.abs(value - target)) / scale)


def constraint_defects(D: DensityClass, X: SpectralDensity) -> dict:
    """Every defining (in)equality of ``D`` evaluated on ``X``; positive means violated."""
    grid = X.grid
    x = X.samples
    p = D.params
    fam, k = D.family, D.index
    out: dict = {}
    scale = max(X.max_norm(), 1e-300)

    if fam == "singleton":
        ref = D.ref("X", grid)
        out["equality"] = _rel(x, ref.samples)
        return out

    def scalar_of(arr: np.ndarray) -> np.ndarray:
        if k == 1:
            return np.real(np.trace(arr, axis1=1, axis2=2))
        if k == 2:
            return np.real(np.diagonal(arr, axis1=1, axis2=2))
        if k == 3:
            B = p["B1"] if fam in ("D0", "DVU") else p["B2"]
            return inner(B, arr)
        return arr

    sx = scalar_of(x)
    if fam in ("D0", "DVU"):
        target = {1: p.get("p"), 2: p.get("p_k"), 3: p.get("p"), 4: p.get("P")}[k]
        out["moment"] = _rel(_integral(sx, grid), target)
    if fam == "DVU":
        V, U = D.ref("V", grid).samples, D.ref("U", grid).samples
        if k == 4:
            lo = np.linalg.eigvalsh(x - V)[:, 0]
            hi = np.linalg.eigvalsh(U - x)[:, 0]
            out["lower"] = float(max(0.0, -lo.min()) / scale)
            out["upper"] = float(max(0.0, -hi.min()) / scale)
        else:
            sv, su = scalar_of(V), scalar_of(U)
            out["lower"] = float(max(0.0, np.max(sv - sx)) / scale)
            out["upper"] = float(max(0.0, np.max(sx - su)) / scale)
    if fam == "Deps":
        eps = p["eps"]
        G1 = D.ref("G1", grid).samples
        target = {1: p.get("q"), 2: p.get("q_k"), 3: p.get("q"), 4: p.get("Q")}[k]
        out["moment"] = _rel(_integral(sx, grid), target)
        floor = (1 - eps) * G1
        if k == 4:
            ev = np.linalg.eigvalsh(x - floor)
            out["contamination"] = float(max(0.0, -ev[:, 0].min()) / scale)
            if eps == 0:
                out["contamination"] = max(out["contamination"], float(np.max(np.abs(x - G1)) / scale))
        else:
            sf = scalar_of(floor)
            out["contamination"] = float(max(0.0, np.max(sf - sx)) / scale)
            if eps == 0:
                out["contamination"] = max(out["contamination"], float(np.max(np.abs(sx - sf)) / scale))
    if fam == "D2delta":
        G1 = D.ref("G1", grid).samples
        diff = scalar_of(x - G1)
        dist = _integral(np.abs(diff) ** 2, grid)
        radius = {1: p.get("delta"), 2: p.get("delta_k"), 3: p.get("delta"), 4: p.get("delta_ij")}[k]
        out["ball"] = float(np.max((dist - radius) / radius))
        out["ball"] = max(out["ball"], 0.0)
    return out


def project_membership(D: DensityClass, X: SpectralDensity, tol: float = MEMBER_TOL) -> dict:
    """``{"member": bool, "violations": {...}, "defects": {...}}``."""
    if X.dim != D.dim:
        raise ModelError(f"density has dimension {X.dim}, class has {D.dim}")
    report = validate_density(X)
    defects = constraint_defects(D, X)
    if not report.passed:
        defects["density"] = float(max(report.summary()["max_hermitian_defect"],
                                       -min(report.summary()["min_eigenvalue"], 0.0)))
    violations = {k: v for k, v in defects.items() if v > tol}
    return {"member": not violations, "violations": violations, "defects": defects}


# ---------------------------------------------------------------------------
# bin-level description shared by the linear maximizer and the samplers


@dataclass(frozen=True)
class BinnedBounds:
    """Per-bin constraints on the scalar ``tau_b`` (trace or one diagonal entry)."""

    layout: BinLayout
    lower: np.ndarray  # (nb,)
    upper: np.ndarray  # (nb,), may be inf
    budget: float | None  # sum_b m_b tau_b, or None for the L2 ball
    center: np.ndarray | None = None  # ball centre per bin
    radius: float | None = None  # effective ball radius after within-bin variance


def binned_bounds(D: DensityClass, grid: FrequencyGrid, component: int | None = None) -> BinnedBounds:
    """Scalar bin constraints for kinds 1 (trace) and 2 (diagonal entry ``component``)."""
    if D.index not in (1, 2):
        raise ModelError(f"binned bounds exist for kinds 1 and 2, not {D.kind}")
    lay = D.layout(grid)
    p = D.params
    nb = lay.n_bins
    m = lay.measure

    def scal(X: SpectralDensity) -> np.ndarray:
        return X.trace() if D.index == 1 else X.diagonal()[:, component]

    lower, upper = np.zeros(nb), np.full(nb, np.inf)
    budget = None
    center = radius = None
    if D.family == "D0":
        budget = p["p"] if D.index == 1 else float(p["p_k"][component])
    elif D.family == "Deps":
        budget = p["q"] if D.index == 1 else float(p["q_k"][component])
        lower = np.maximum(lay.bin_max((1 - p["eps"]) * scal(D.ref("G1", grid))), 0.0)
        if p["eps"] == 0:
            upper = lower.copy()
    elif D.family == "DVU":
        budget = p["p"] if D.index == 1 else float(p["p_k"][component])
        lower = np.maximum(lay.bin_max(scal(D.ref("V", grid))), 0.0)
        upper = lay.bin_min(scal(D.ref("U", grid)))
        if np.any(lower > upper + MEMBER_TOL * max(1.0, float(np.max(upper)))):
            raise InfeasibleClass(f"{D.kind}: bounds V, U cross within a bin; use finer bins")
    elif D.family == "D2delta":
        g = scal(D.ref("G1", grid))
        center = lay.average(g)
        spread = float(np.sum(lay.node_measure() * (g - lay.expand(center)) ** 2))
        delta = p["delta"] if D.index == 1 else float(p["delta_k"][component])
        radius = delta - spread
        if radius < 0:
            raise InfeasibleClass(f"{D.kind}: reference varies within bins more than the ball radius allows")
    if budget is not None:
        lo_mass, hi_mass = float(m @ lower), float(m @ np.where(np.isinf(upper), np.inf, upper))
        tol = MEMBER_TOL * max(1.0, budget)
        if budget < lo_mass - tol or budget > hi_mass + tol:
            raise InfeasibleClass(
                f"{D.kind}: budget {budget:.6g} outside the attainable range [{lo_mass:.6g}, {hi_mass:.6g}]"
            )
    return BinnedBounds(lay, lower, upper, budget, center, radius)


# ---------------------------------------------------------------------------
# random members


def _random_psd_directions(rng: np.random.Generator, nb: int, T: int, unit_diag: bool) -> np.ndarray:
    """Real symmetric PSD matrices per bin: unit trace, or unit diagonal if ``unit_diag``."""
    X = rng.standard_normal((nb, T, T + 1))
    M = X @ np.swapaxes(X, 1, 2)
    if unit_diag:
        d = np.sqrt(np.diagonal(M, axis1=1, axis2=2))
        return M / (d[:, :, None] * d[:, None, :])
    return M / np.trace(M, axis1=1, axis2=2)[:, None, None]


def _fill_budget(rng, lower, upper, m, budget):
    """Random point of ``{lower <= tau <= upper, m . tau = budget}``."""
    finite_up = np.where(np.isinf(upper), lower + 2 * budget / m.sum() + 1.0, upper)
    x = lower + rng.uniform(size=lower.size) * (finite_up - lower)

    def mass(s):
        return float(m @ np.clip(x + s, lower, upper))

    lo, hi = -float(np.max(x - lower)) - 1.0, budget / float(m.min()) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(mid) < budget:
            lo = mid
        else:
            hi = mid
    tau = np.clip(x + 0.5 * (lo + hi), lower, upper)
    free = (tau > lower) & (tau < upper)
    if np.any(free):  # polish the tiny bisection residual on interior bins
        tau[free] += (budget - float(m @ tau)) / float(m[free].sum())
    return tau


def _scalar_sample(rng, bb: BinnedBounds) -> np.ndarray:
    m = bb.layout.measure
    if bb.budget is None:  # ball: random direction, random radius, keep non-negative
        z = rng.standard_normal(m.size)
        z /= np.sqrt(m @ z**2)
        r = np.sqrt(max(bb.radius, 0.0)) * rng.uniform() ** 0.5
        tau = bb.center + r * z
        if np.any(tau < 0):
            neg = tau < 0
            shrink = np.min(bb.center[neg] / (bb.center[neg] - tau[neg]))
            tau = bb.center + shrink * (tau - bb.center)
        return np.maximum(tau, 0.0)
    if np.allclose(bb.lower, bb.upper):
        return bb.lower.copy()
    if np.all(np.isinf(bb.upper)):
        slack = bb.budget - float(m @ bb.lower)
        share = rng.dirichlet(np.ones(m.size))
        return bb.lower + slack * share / m
    return _fill_budget(rng, bb.lower, bb.upper, m, bb.budget)


def random_member(D: DensityClass, grid: FrequencyGrid, rng: np.random.Generator) -> SpectralDensity:
    """A random member of the binned subclass (kinds 1, 2 and singleton)."""
    if D.family == "singleton":
        return D.ref("X", grid)
    T = D.dim
    lay = D.layout(grid)
    if D.index == 1:
        tau = _scalar_sample(rng, binned_bounds(D, grid))
        dirs = _random_psd_directions(rng, lay.n_bins, T, unit_diag=False)
        per_bin = tau[:, None, None] * dirs
    elif D.index == 2:
        tau = np.stack([_scalar_sample(rng, binned_bounds(D, grid, k)) for k in range(T)], axis=1)
        corr = _random_psd_directions(rng, lay.n_bins, T, unit_diag=True)
        s = np.sqrt(tau)
        per_bin = corr * s[:, :, None] * s[:, None, :]
    else:
        raise UnsupportedClass(f"random members of {D.kind} are not implemented")
    return SpectralDensity(grid, per_bin[lay.labels].astype(complex))


def check_grid(D: DensityClass, grid: FrequencyGrid):
    for key, ref in D.references.items():
        if ref.family is None and ref.grid != grid:
            raise GridMismatch(f"reference {key} is tabulated on a different grid")
