"""Spectral density matrices and built-in density families.

A :class:`SpectralDensity` is a stack of ``T x T`` complex matrices sampled on
a :class:`FrequencyGrid`.  Families (:class:`Lorentzian`, :class:`White`, ...)
know how to sample themselves on a grid and, where possible, how to evaluate
their covariance function in closed form.

Lorentzian terms are periodized over the grid's band (period ``2*lambda_max``)
when sampled with ``fold=True``.  On a lattice-consistent grid this gives the
spectral density of the process sampled at ``time_step = pi/lambda_max``, so
no spectral mass beyond the band is lost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GridMismatch, ModelError, SingularDensity
from .grids import FrequencyGrid

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class SpectralDensity:
    """Matrix-valued density ``F(lambda)`` on a frequency grid.

    ``samples`` has shape ``(n_points, T, T)``.  ``family`` optionally records
    the analytic model the samples came from; the Gaussian oracle uses it for
    exact covariances.
    """

    grid: FrequencyGrid
    samples: np.ndarray
    interpolation: str = "linear"
    family: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=complex)
        if x.ndim == 1:
            x = x[:, None, None]
        if x.ndim != 3 or x.shape[1] != x.shape[2]:
            raise ModelError(f"density samples must have shape (n, T, T), got {x.shape}")
        if x.shape[0] != self.grid.n_points:
            raise GridMismatch(f"density has {x.shape[0]} samples, grid has {self.grid.n_points} nodes")
        if not np.all(np.isfinite(x)):
            raise ModelError("density samples must be finite")
        if self.interpolation not in ("linear", "nearest"):
            raise ModelError(f"unknown interpolation {self.interpolation!r}")
        x = np.ascontiguousarray(x)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def scalar(cls, grid: FrequencyGrid, values, **kw) -> "SpectralDensity":
        return cls(grid, np.asarray(values)[:, None, None], **kw)

    @classmethod
    def constant(cls, grid: FrequencyGrid, matrix) -> "SpectralDensity":
        m = np.atleast_2d(np.asarray(matrix, dtype=complex))
        return cls(grid, np.broadcast_to(m, (grid.n_points,) + m.shape).copy())

    @classmethod
    def zeros(cls, grid: FrequencyGrid, dim: int = 1) -> "SpectralDensity":
        return cls(grid, np.zeros((grid.n_points, dim, dim), dtype=complex), family=Zero(dim))

    @classmethod
    def identity(cls, grid: FrequencyGrid, dim: int = 1) -> "SpectralDensity":
        return cls.constant(grid, np.eye(dim))

    def _check(self, other: "SpectralDensity"):
        if other.grid != self.grid:
            raise GridMismatch("densities live on different frequency grids")
        if other.dim != self.dim:
            raise ModelError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other: "SpectralDensity") -> "SpectralDensity":
        self._check(other)
        fam = None
        if self.family is not None and other.family is not None:
            fam = Sum((self.family, other.family))
        return SpectralDensity(self.grid, self.samples + other.samples, self.interpolation, fam)

    def __sub__(self, other: "SpectralDensity") -> "SpectralDensity":
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "SpectralDensity":
        fam = Scaled(c, self.family) if self.family is not None else None
        return SpectralDensity(self.grid, c * self.samples, self.interpolation, fam)

    def __rmul__(self, c: float) -> "SpectralDensity":
        return self.scale(c)

    def combine(self, other: "SpectralDensity", weight: float) -> "SpectralDensity":
        """Convex combination ``(1 - weight) * self + weight * other``."""
        self._check(other)
        return SpectralDensity(self.grid, (1 - weight) * self.samples + weight * other.samples,
                               self.interpolation)

    def trace(self) -> np.ndarray:
        return np.real(np.trace(self.samples, axis1=1, axis2=2))

    def diagonal(self) -> np.ndarray:
        return np.real(np.diagonal(self.samples, axis1=1, axis2=2))

    def integral(self) -> np.ndarray:
        """``(1/2pi) * integral of F`` (the lag-0 covariance), shape ``(T, T)``."""
        return np.einsum("n,nij->ij", self.grid.weights, self.samples) / (2 * np.pi)

    def is_zero(self) -> bool:
        return not np.any(self.samples)

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.samples, ord=2, axis=(1, 2)))) if self.samples.size else 0.0

    def inverse(self) -> np.ndarray:
        """Pointwise inverse; raises :class:`SingularDensity` near singular nodes."""
        ev = np.linalg.eigvalsh(_herm(self.samples))
        scale = max(float(np.max(np.abs(ev))), np.finfo(float).tiny)
        bad = np.flatnonzero(ev[:, 0] <= SINGULAR_TOL * scale)
        if bad.size:
            i = int(bad[0])
            raise SingularDensity(
                f"density is numerically singular at frequency index {i} (lambda={self.grid.nodes[i]:.6g})",
                {"index": i, "lambda": float(self.grid.nodes[i]), "min_eigenvalue": float(ev[i, 0]),
                 "n_singular": int(bad.size)},
            )
        return np.linalg.inv(self.samples)

    def at(self, lam) -> np.ndarray:
        """Evaluate at arbitrary frequencies inside the band."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        nodes = self.grid.nodes
        if np.any(np.abs(lam) > self.grid.lambda_max * (1 + 1e-12)):
            raise GridMismatch("requested frequency outside the density's band")
        flat = self.samples.reshape(self.grid.n_points, -1)
        if self.interpolation == "nearest":
            idx = np.clip(np.rint((lam - nodes[0]) / self.grid.spacing).astype(int), 0, nodes.size - 1)
            out = flat[idx]
        else:
            out = np.empty((lam.size, flat.shape[1]), dtype=complex)
            for k in range(flat.shape[1]):
                out[:, k] = np.interp(lam, nodes, flat[:, k].real) + 1j * np.interp(lam, nodes, flat[:, k].imag)
        return out.reshape(lam.size, self.dim, self.dim)

    def resample(self, grid: FrequencyGrid) -> "SpectralDensity":
        if grid == self.grid:
            return self
        if self.family is not None:
            return self.family.sample(grid)
        return SpectralDensity(grid, self.at(grid.nodes), self.interpolation)

    def covariance(self, lags) -> np.ndarray:
        """Covariance ``R(tau) = (1/2pi) int F e^{i lambda tau}``, shape ``(L, T, T)``.

        Uses the family's closed form when one is attached, otherwise quadrature
        on the grid.
        """
        if self.family is not None and self.family.has_closed_form:
            return self.family.covariance(lags)
        return quadrature_covariance(self, lags)


def quadrature_covariance(F: SpectralDensity, lags) -> np.ndarray:
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    g = F.grid
    flat = F.samples.reshape(g.n_points, -1) * g.weights[:, None]
    out = np.empty((lags.size, flat.shape[1]), dtype=complex)
    for s in range(0, lags.size, 256):
        ph = np.exp(1j * np.outer(lags[s:s + 256], g.nodes))
        out[s:s + 256] = ph @ flat
    return out.reshape(lags.size, F.dim, F.dim) / (2 * np.pi)


def _herm(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.conj(np.swapaxes(x, -1, -2)))


@dataclass
class ValidationReport:
    hermitian_defect: np.ndarray
    min_eigenvalue: np.ndarray
    symmetry_defect: np.ndarray
    scale: float
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "max_hermitian_defect": float(np.max(self.hermitian_defect, initial=0.0)),
            "min_eigenvalue": float(np.min(self.min_eigenvalue, initial=0.0)),
            "max_symmetry_defect": float(np.max(self.symmetry_defect, initial=0.0)),
            "violations": self.violations[:50],
            "n_violations": len(self.violations),
        }


def validate_density(F: SpectralDensity, tol: float = HERMITIAN_TOL) -> ValidationReport:
    """Check Hermitian, PSD and real-process symmetry at every node."""
    x = F.samples
    norms = np.linalg.norm(x, ord=2, axis=(1, 2))
    herm = np.linalg.norm(x - np.conj(np.swapaxes(x, 1, 2)), ord=2, axis=(1, 2))
    ev = np.linalg.eigvalsh(_herm(x))[:, 0]
    mirror = x[F.grid.mirror()]
    sym = np.linalg.norm(mirror - np.conj(x), ord=2, axis=(1, 2))
    peak = float(norms.max()) if norms.size else 0.0
    floor = max(peak, np.finfo(float).tiny)

    violations = []
    lam = F.grid.nodes
    for i in np.flatnonzero(herm > tol * np.maximum(norms, floor)):
        violations.append({"index": int(i), "lambda": float(lam[i]), "kind": "hermitian", "defect": float(herm[i])})
    for i in np.flatnonzero(ev < -PSD_TOL * np.maximum(norms, floor)):
        violations.append({"index": int(i), "lambda": float(lam[i]), "kind": "psd", "min_eigenvalue": float(ev[i])})
    for i in np.flatnonzero(sym > tol * floor):
        violations.append({"index": int(i), "lambda": float(lam[i]), "kind": "symmetry", "defect": float(sym[i])})
    violations.sort(key=lambda v: v["index"])
    return ValidationReport(herm, ev, sym, peak, violations)


# ---------------------------------------------------------------------------
# families


def periodized_lorentzian(lam, width: float, period: float) -> np.ndarray:
    """``sum_k 1 / ((lam + k*period)^2 + width^2)`` in closed form."""
    lam = np.asarray(lam, dtype=float)
    x = 2 * np.pi * width / period
    e = math.exp(-x)
    num = (1 - e * e) * np.pi / (width * period)
    return num / (1 + e * e - 2 * e * np.cos(2 * np.pi * lam / period))


class Family:
    """Base class of analytic density models."""

    has_closed_form = False
    dim = 1

    def values(self, lam: np.ndarray, fold_period: float | None) -> np.ndarray:
        raise NotImplementedError

    def sample(self, grid: FrequencyGrid, fold: bool = True) -> SpectralDensity:
        period = 2 * grid.lambda_max if fold else None
        return SpectralDensity(grid, self.values(grid.nodes, period), family=self)

    def covariance(self, lags) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form covariance")

    def scaled(self, c: float) -> "Family":
        return Scaled(c, self)


@dataclass(frozen=True)
class Lorentzian(Family):
    """``sum_r W_r * s_r / (lambda^2 + c_r^2)`` with constant PSD matrices ``W_r``.

    Covariance is ``sum_r W_r * s_r/(2 c_r) * exp(-c_r |tau|)``.
    """

    terms: tuple  # of (weight matrix, scale s, width c)
    has_closed_form = True

    def __post_init__(self):
        cleaned = []
        for w, s, c in self.terms:
            w = np.atleast_2d(np.asarray(w, dtype=complex))
            if w.shape[0] != w.shape[1]:
                raise ModelError("Lorentzian weight must be square")
            if not c > 0:
                raise ModelError(f"Lorentzian width must be positive, got {c}")
            cleaned.append((w, float(s), float(c)))
        if not cleaned:
            raise ModelError("Lorentzian needs at least one term")
        dims = {w.shape[0] for w, _, _ in cleaned}
        if len(dims) != 1:
            raise ModelError("Lorentzian terms have inconsistent dimensions")
        object.__setattr__(self, "terms", tuple(cleaned))

    @classmethod
    def scalar(cls, scale: float = 1.0, width: float = 1.0) -> "Lorentzian":
        return cls(((np.eye(1), scale, width),))

    @classmethod
    def diagonal(cls, scales: Sequence[float], widths: Sequence[float]) -> "Lorentzian":
        T = len(scales)
        terms = []
        for k, (s, c) in enumerate(zip(scales, widths)):
            e = np.zeros((T, T))
            e[k, k] = 1.0
            terms.append((e, s, c))
        return cls(tuple(terms))

    @property
    def dim(self) -> int:
        return self.terms[0][0].shape[0]

    def values(self, lam, fold_period=None):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros((lam.size, self.dim, self.dim), dtype=complex)
        for w, s, c in self.terms:
            prof = periodized_lorentzian(lam, c, fold_period) if fold_period else 1.0 / (lam**2 + c * c)
            out += (s * prof)[:, None, None] * w
        return out

    def covariance(self, lags):
        lags = np.atleast_1d(np.asarray(lags, dtype=float))
        out = np.zeros((lags.size, self.dim, self.dim), dtype=complex)
        for w, s, c in self.terms:
            out += (s / (2 * c) * np.exp(-c * np.abs(lags)))[:, None, None] * w
        return out


@dataclass(frozen=True)
class White(Family):
    """Constant matrix over the band (band-limited white noise)."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.atleast_2d(np.asarray(self.matrix, dtype=complex)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def values(self, lam, fold_period=None):
        return np.broadcast_to(self.matrix, (np.size(lam),) + self.matrix.shape).copy()


@dataclass(frozen=True)
class Zero(Family):
    dim: int = 1
    has_closed_form = True

    def values(self, lam, fold_period=None):
        return np.zeros((np.size(lam), self.dim, self.dim), dtype=complex)

    def covariance(self, lags):
        return np.zeros((np.size(lags), self.dim, self.dim), dtype=complex)


@dataclass(frozen=True)
class Sampled(Family):
    """Tabulated samples on arbitrary increasing frequencies, interpolated."""

    frequencies: np.ndarray
    matrices: np.ndarray
    interpolation: str = "linear"

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        m = np.asarray(self.matrices, dtype=complex)
        if m.ndim == 1:
            m = m[:, None, None]
        if f.ndim != 1 or f.size != m.shape[0] or f.size < 2:
            raise ModelError("sampled density needs matching frequency and matrix arrays (>= 2 samples)")
        if np.any(np.diff(f) <= 0):
            raise ModelError("sample frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "matrices", m)

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def values(self, lam, fold_period=None):
        lam = np.asarray(lam, dtype=float)
        f = self.frequencies
        slack = 1e-9 * max(1.0, abs(f[0]), abs(f[-1]))
        if lam.min() < f[0] - slack or lam.max() > f[-1] + slack:
            raise GridMismatch(
                f"grid band [{lam.min():.6g}, {lam.max():.6g}] exceeds sampled range [{f[0]:.6g}, {f[-1]:.6g}]"
            )
        flat = self.matrices.reshape(f.size, -1)
        if self.interpolation == "nearest":
            idx = np.clip(np.searchsorted(f, lam), 1, f.size - 1)
            idx = np.where(np.abs(lam - f[idx - 1]) <= np.abs(f[idx] - lam), idx - 1, idx)
            out = flat[idx]
        else:
            out = np.empty((lam.size, flat.shape[1]), dtype=complex)
            for k in range(flat.shape[1]):
                out[:, k] = np.interp(lam, f, flat[:, k].real) + 1j * np.interp(lam, f, flat[:, k].imag)
        return out.reshape(lam.size, self.dim, self.dim)

    def sample(self, grid, fold=True):
        # tabulated data is used as given, never periodized
        return SpectralDensity(grid, self.values(grid.nodes), self.interpolation, family=self)


@dataclass(frozen=True)
class Scaled(Family):
    factor: float
    base: Family

    @property
    def has_closed_form(self):
        return self.base.has_closed_form

    @property
    def dim(self):
        return self.base.dim

    def values(self, lam, fold_period=None):
        return self.factor * self.base.values(lam, fold_period)

    def sample(self, grid, fold=True):
        return self.base.sample(grid, fold).scale(self.factor)

    def covariance(self, lags):
        return self.factor * self.base.covariance(lags)


@dataclass(frozen=True)
class Sum(Family):
    parts: tuple

    @property
    def has_closed_form(self):
        return all(p.has_closed_form for p in self.parts)

    @property
    def dim(self):
        return self.parts[0].dim

    def values(self, lam, fold_period=None):
        return sum(p.values(lam, fold_period) for p in self.parts)

    def sample(self, grid, fold=True):
        out = self.parts[0].sample(grid, fold)
        for p in self.parts[1:]:
            out = out + p.sample(grid, fold)
        return SpectralDensity(grid, out.samples, family=self)

    def covariance(self, lags):
        return sum(p.covariance(lags) for p in self.parts)
