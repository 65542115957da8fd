"""Optimal spectral characteristic, mean-square error and orthogonality checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .densities import SpectralDensity
from .errors import FormMismatch, GridMismatch
from .grids import FrequencyGrid, MissingSet, WeightFunction
from .operators import OperatorSystem, SolutionC, assemble_system, solve_c
from .spectral import exponential_transform, hermitian_form, transform_values

FORM_TOL = 1e-4


@dataclass(frozen=True)
class EstimateSolution:
    h: np.ndarray  # (n, T)
    C: np.ndarray  # (n, T)
    A: np.ndarray  # (n, T)
    c: SolutionC
    delta: float
    delta_operator_form: float
    delta_spectral_form: float
    system: OperatorSystem = field(repr=False)

    @property
    def form_gap(self) -> float:
        return relative_gap(self.delta_operator_form, self.delta_spectral_form)

    def summary(self) -> dict:
        return {
            "delta": self.delta,
            "delta_forms": {
                "operator": self.delta_operator_form,
                "spectral": self.delta_spectral_form,
                "relative_gap": self.form_gap,
            },
            "condition_number": self.system.condition_number_B,
            "residuals": {
                "solve": self.c.residual,
                "regularization_used": self.c.regularization_used,
            },
            "mode": self.c.mode,
        }


def relative_gap(x: float, y: float) -> float:
    scale = max(abs(x), abs(y))
    return abs(x - y) / scale if scale > 0 else 0.0


def _row_times(v: np.ndarray, M: np.ndarray) -> np.ndarray:
    return np.einsum("ni,nij->nj", v, M)


def characteristic_from_c(A: np.ndarray, C: np.ndarray, F: SpectralDensity, inverse: np.ndarray) -> np.ndarray:
    """``h^T = (A^T F - C^T) (F+G)^{-1}``, row-wise per frequency."""
    return _row_times(_row_times(A, F.samples) - C, inverse)


def spectral_characteristic(F: SpectralDensity, G: SpectralDensity, sys: OperatorSystem,
                            c: SolutionC, a: WeightFunction, grid: FrequencyGrid | None = None):
    """Return ``(h, C)`` on the grid."""
    grid = sys.grid if grid is None else grid
    if grid != sys.grid:
        raise GridMismatch("grid differs from the one the operators were assembled on")
    A = exponential_transform(a, sys.S, grid)
    C = transform_values(c.c, sys.S, grid)
    h = characteristic_from_c(A, C, F.resample(grid), sys.symbols.inverse)
    return h, C


def cross_mse(h0: np.ndarray, F: SpectralDensity, G: SpectralDensity, A: np.ndarray,
              grid: FrequencyGrid | None = None) -> float:
    """Error of the fixed characteristic ``h0`` when the true densities are ``(F, G)``.

    ``(1/2pi) int (A-h0)^T F conj(A-h0) + h0^T G conj(h0)``; affine in ``(F, G)``.
    """
    grid = F.grid if grid is None else grid
    d = A - h0
    integrand = hermitian_form(d, F.samples) + hermitian_form(h0, G.samples)
    return float(np.real(np.sum(grid.weights * integrand)) / (2 * np.pi))


def cross_weights(h0: np.ndarray, A: np.ndarray):
    """Per-frequency rank-one matrices ``w_F``, ``w_G``.

    ``cross_mse = (1/2pi) sum_n weight_n * (tr(F_n w_F,n) + tr(G_n w_G,n))``.
    """
    d = A - h0
    wF = np.einsum("nj,ni->nij", d, np.conj(d))
    wG = np.einsum("nj,ni->nij", h0, np.conj(h0))
    return wF, wG


def mse(sys: OperatorSystem, c: SolutionC, a: WeightFunction, F: SpectralDensity,
        G: SpectralDensity, h: np.ndarray, grid: FrequencyGrid | None = None) -> dict:
    grid = sys.grid if grid is None else grid
    av = a.values.reshape(-1).astype(complex)
    cv = c.vector
    if c.mode == "noiseless":
        op = np.vdot(cv, sys.mass @ av)
    else:
        op = np.vdot(cv, sys.R @ av) + np.vdot(av, sys.Q @ av)
    A = exponential_transform(a, sys.S, grid)
    spectral_value = cross_mse(h, F.resample(grid), G.resample(grid), A, grid)
    return {"delta_operator_form": float(np.real(op)), "delta_spectral_form": spectral_value}


def verify_orthogonality(h: np.ndarray, F: SpectralDensity, G: SpectralDensity, A: np.ndarray,
                         t_samples, grid: FrequencyGrid | None = None) -> float:
    """Max norm over ``t`` of ``(1/2pi) int [A^T F - h^T (F+G)] e^{-i t lambda}``."""
    grid = F.grid if grid is None else grid
    t = np.atleast_1d(np.asarray(t_samples, dtype=float))
    if t.size == 0:
        return 0.0
    r = _row_times(A, F.samples) - _row_times(h, F.samples + G.samples)
    ph = np.exp(-1j * np.outer(t, grid.nodes)) * grid.weights[None, :]
    vals = ph @ r / (2 * np.pi)
    return float(np.max(np.linalg.norm(vals, axis=1)))


def estimate(F: SpectralDensity, G: SpectralDensity | None, S: MissingSet, a: WeightFunction,
             grid: FrequencyGrid | None = None, mode: str | None = None,
             tikhonov: float | None = None, check_forms: bool = True) -> EstimateSolution:
    """Full pipeline: assemble, solve for ``c``, form ``h`` and both error forms.

    ``mode`` defaults to ``"noiseless"`` when ``G`` is absent or identically zero.
    """
    grid = F.grid if grid is None else grid
    F = F.resample(grid)
    G = SpectralDensity.zeros(grid, F.dim) if G is None else G.resample(grid)
    if mode is None:
        mode = "noiseless" if G.is_zero() else "noisy"
    if a.S != S:
        a = a.resample(S)
    sys = assemble_system(F, G, S, grid)
    sol = solve_c(sys, a, mode, tikhonov)
    h, C = spectral_characteristic(F, G, sys, sol, a, grid)
    A = exponential_transform(a, S, grid)
    forms = mse(sys, sol, a, F, G, h, grid)
    est = EstimateSolution(h, C, A, sol, forms["delta_spectral_form"], forms["delta_operator_form"],
                           forms["delta_spectral_form"], sys)
    if check_forms and est.form_gap > FORM_TOL:
        raise FormMismatch(
            f"operator-form and spectral-form errors differ by {est.form_gap:.3g} (relative)",
            est.summary(),
        )
    return est
