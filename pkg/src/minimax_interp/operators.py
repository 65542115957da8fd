"""Discretized integral operators on the missing set and the equation for c(t).

Each operator has a matrix symbol ``M(lambda)`` and kernel
``K(tau) = (1/2pi) int M(lambda) e^{i lambda tau} dlambda``.  With quadrature
nodes ``t_j`` and weights ``w_j`` the discrete operator is the block matrix

    block(j, k) = w_j * w_k * K(t_k - t_j)^T

so that for vectors ``u, v`` on the nodes, ``v^H op u`` reproduces the weighted
double integral.  Kernels are evaluated once per distinct lag.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .densities import SpectralDensity
from .errors import GridMismatch, IllConditioned, ModelError, NumericalError
from .grids import FrequencyGrid, MissingSet, WeightFunction

DEFAULT_TIKHONOV_FACTOR = 1e-12
ILL_CONDITIONED = 1e12
_LAG_DECIMALS = 10


def lag_table(nodes: np.ndarray):
    """Distinct lags ``t_k - t_j`` and the index array mapping each pair to one."""
    tau = nodes[None, :] - nodes[:, None]
    uniq, inv = np.unique(np.round(tau, _LAG_DECIMALS), return_inverse=True)
    return uniq, inv.reshape(tau.shape)


def kernel_at_lags(symbol: np.ndarray, grid: FrequencyGrid, lags: np.ndarray) -> np.ndarray:
    """``(1/2pi) sum_n w_n symbol_n e^{i lambda_n tau}`` for each lag, shape ``(L, T, T)``."""
    n, T, _ = symbol.shape
    flat = (symbol.reshape(n, T * T) * grid.weights[:, None])
    out = np.empty((lags.size, T * T), dtype=complex)
    for s in range(0, lags.size, 512):
        ph = np.exp(1j * np.outer(lags[s:s + 512], grid.nodes))
        out[s:s + 512] = ph @ flat
    return out.reshape(lags.size, T, T) / (2 * np.pi)


def block_operator(kernels: np.ndarray, inv: np.ndarray, weights: np.ndarray) -> np.ndarray:
    m = weights.size
    T = kernels.shape[1]
    blocks = np.swapaxes(kernels, 1, 2)[inv]  # (m, m, T, T), K^T per pair
    blocks = blocks * (weights[:, None] * weights[None, :])[:, :, None, None]
    return blocks.transpose(0, 2, 1, 3).reshape(m * T, m * T)


def discrete_operator(symbol: np.ndarray, grid: FrequencyGrid, S: MissingSet) -> np.ndarray:
    lags, inv = lag_table(np.asarray(S.nodes))
    return block_operator(kernel_at_lags(symbol, grid, lags), inv, S.weights)


@dataclass(frozen=True)
class Symbols:
    """Per-frequency matrices ``(F+G)^{-1}``, ``F (F+G)^{-1}``, ``F (F+G)^{-1} G``."""

    inverse: np.ndarray
    signal_gain: np.ndarray
    noise_gain: np.ndarray

    @classmethod
    def from_densities(cls, F: SpectralDensity, G: SpectralDensity) -> "Symbols":
        if F.grid != G.grid:
            raise GridMismatch("F and G live on different frequency grids")
        P = (F + G).inverse()
        FP = F.samples @ P
        return cls(P, FP, FP @ G.samples)


@dataclass(frozen=True)
class OperatorSystem:
    S: MissingSet
    grid: FrequencyGrid
    dim: int
    B: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    mass: np.ndarray
    symbols: Symbols = field(repr=False)
    eigenvalues_B: np.ndarray = field(repr=False)
    eigenvalues_Q: np.ndarray = field(repr=False)

    @property
    def time_nodes(self) -> np.ndarray:
        return self.S.nodes

    @property
    def size(self) -> int:
        return self.B.shape[0]

    @property
    def condition_number_B(self) -> float:
        lo, hi = self.eigenvalues_B[0], self.eigenvalues_B[-1]
        return float(hi / lo) if lo > 0 else float("inf")

    def default_tikhonov(self) -> float:
        return DEFAULT_TIKHONOV_FACTOR * float(self.eigenvalues_B[-1])

    def diagnostics(self) -> dict:
        return {
            "size": self.size,
            "condition_number_B": self.condition_number_B,
            "min_eigenvalue_B": float(self.eigenvalues_B[0]),
            "max_eigenvalue_B": float(self.eigenvalues_B[-1]),
            "min_eigenvalue_Q": float(self.eigenvalues_Q[0]),
            "hermitian_defect_B": hermitian_defect(self.B),
            "hermitian_defect_Q": hermitian_defect(self.Q),
            "toeplitz_defect_B": toeplitz_defect(self.B, self.S, self.dim),
            "toeplitz_defect_Q": toeplitz_defect(self.Q, self.S, self.dim),
        }


def assemble_system(F: SpectralDensity, G: SpectralDensity, S: MissingSet,
                    grid: FrequencyGrid | None = None) -> OperatorSystem:
    grid = F.grid if grid is None else grid
    F, G = F.resample(grid), G.resample(grid)
    if F.dim != G.dim:
        raise ModelError(f"F has dimension {F.dim}, G has {G.dim}")
    sym = Symbols.from_densities(F, G)
    ident = np.broadcast_to(np.eye(F.dim, dtype=complex), sym.inverse.shape)

    lags, inv = lag_table(np.asarray(S.nodes))
    ops = [block_operator(kernel_at_lags(x, grid, lags), inv, S.weights)
           for x in (sym.inverse, sym.signal_gain, sym.noise_gain, ident)]
    B, R, Q, mass = ops
    return OperatorSystem(
        S, grid, F.dim, B, R, Q, mass, sym,
        np.linalg.eigvalsh(_sym(B)), np.linalg.eigvalsh(_sym(Q)),
    )


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


def hermitian_defect(X: np.ndarray) -> float:
    scale = np.linalg.norm(X)
    return float(np.linalg.norm(X - X.conj().T) / scale) if scale > 0 else 0.0


def toeplitz_defect(X: np.ndarray, S: MissingSet, dim: int) -> float:
    """Largest spread among node-pair blocks sharing a lag, relative to ``max|X|``.

    Quadrature weights are divided out first so only the kernel is compared.
    """
    m = S.size
    scale = float(np.max(np.abs(X))) if X.size else 0.0
    if scale == 0:
        return 0.0
    w = S.weights
    blocks = X.reshape(m, dim, m, dim).transpose(0, 2, 1, 3) / (w[:, None] * w[None, :])[:, :, None, None]
    _, inv = lag_table(np.asarray(S.nodes))
    flat = blocks.reshape(m * m, dim * dim)
    key = inv.ravel()
    order = np.argsort(key, kind="stable")
    key, flat = key[order], flat[order]
    starts = np.r_[0, np.flatnonzero(np.diff(key)) + 1]
    first = flat[starts][np.repeat(np.arange(starts.size), np.diff(np.r_[starts, key.size]))]
    kernel_scale = float(np.max(np.abs(blocks)))
    return float(np.max(np.abs(flat - first)) / kernel_scale)


@dataclass(frozen=True)
class SolutionC:
    c: np.ndarray  # (m, T) real-or-complex values on the nodes
    regularization_used: float
    residual: float
    mode: str
    rhs: np.ndarray = field(repr=False)

    @property
    def vector(self) -> np.ndarray:
        return self.c.reshape(-1)


def rhs_for(sys: OperatorSystem, a: WeightFunction, mode: str) -> np.ndarray:
    if a.S != sys.S:
        raise GridMismatch("weight function lives on a different missing set")
    if a.dim != sys.dim:
        raise ModelError(f"weight function has dimension {a.dim}, system has {sys.dim}")
    vec = a.values.reshape(-1).astype(complex)
    if mode == "noisy":
        return sys.R @ vec
    if mode == "noiseless":
        return sys.mass @ vec
    raise ModelError(f"unknown mode {mode!r}")


def solve_c(sys: OperatorSystem, a: WeightFunction, mode: str = "noisy",
            tikhonov: float | None = None) -> SolutionC:
    """Solve ``(B + eps I) c = R a`` (noisy) or ``(B + eps I) c = M a`` (noiseless)."""
    rhs = rhs_for(sys, a, mode)
    eps = sys.default_tikhonov() if tikhonov is None else float(tikhonov)
    if eps < 0:
        raise ModelError("tikhonov must be non-negative")
    shape = (sys.S.size, sys.dim)
    if not np.any(rhs):
        return SolutionC(np.zeros(shape, dtype=complex), eps, 0.0, mode, rhs)
    cond = sys.condition_number_B
    if eps == 0 and cond > ILL_CONDITIONED:
        raise IllConditioned(
            f"operator B has condition number {cond:.3g} > {ILL_CONDITIONED:.0e}; use tikhonov > 0",
            {"condition_number_B": cond, "min_eigenvalue_B": float(sys.eigenvalues_B[0])},
        )
    A = sys.B + eps * np.eye(sys.size)
    try:
        c = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"linear solve failed: {exc}", {"condition_number_B": cond}) from exc
    residual = float(np.linalg.norm(sys.B @ c - rhs) / np.linalg.norm(rhs))
    return SolutionC(c.reshape(shape), eps, residual, mode, rhs)


# ---------------------------------------------------------------------------
# binary cache: one JSON header line, then row-major complex64 payload


def content_hash(document: dict) -> str:
    blob = json.dumps(document, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_cache(sys: OperatorSystem, path: str, key: str) -> None:
    header = {"dims": [4, sys.size, sys.size], "hash": key, "order": ["B", "R", "Q", "mass"]}
    payload = np.stack([sys.B, sys.R, sys.Q, sys.mass]).astype(np.complex64)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".cache-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            fh.write(np.ascontiguousarray(payload).tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_cache(path: str, key: str):
    """Return ``{"B", "R", "Q", "mass"}`` arrays, or ``None`` on a missing/stale cache."""
    try:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            raw = fh.read()
    except (OSError, ValueError):
        return None
    if header.get("hash") != key:
        return None
    dims = tuple(header["dims"])
    data = np.frombuffer(raw, dtype=np.complex64)
    if data.size != int(np.prod(dims)):
        return None
    data = data.reshape(dims).astype(complex)
    return dict(zip(header.get("order", ["B", "R", "Q", "mass"]), data))
