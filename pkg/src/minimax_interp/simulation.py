"""Monte Carlo synthesis of Gaussian paths and a brute-force conditioning oracle.

Paths are synthesized on the estimation grid itself: independent complex
Gaussian increments ``Z_j`` with covariance ``(w_j / 2pi) F(lambda_j)`` are
summed as ``x(t) = sum_j e^{i lambda_j t} Z_j`` with an FFT.  The synthesized
process is periodic with period ``N * time_step`` where ``N = n_points - 1``;
the two band edges alias to one node and are merged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .densities import SpectralDensity
from .errors import GridMismatch, ModelError
from .grids import FrequencyGrid, MissingSet, WeightFunction

DECAY_RATIO = 1e-3
MARGIN_SCALES = 4.0
CHUNK = 500


def correlation_scale(F: SpectralDensity, time_step: float, max_lag: float = 64.0) -> float:
    """Smallest lag at which every entry of ``R(tau)`` falls below ``R(0) / e``."""
    lags = np.arange(0.0, max_lag + time_step / 2, time_step)
    R = np.abs(F.covariance(lags)).reshape(lags.size, -1).max(axis=1)
    if R[0] == 0:
        return 0.0
    below = np.flatnonzero(R <= R[0] / math.e)
    return float(lags[below[0]]) if below.size else float(max_lag)


def decay_diagnostic(F: SpectralDensity, margin: float) -> dict:
    r0 = float(np.max(np.abs(F.covariance([0.0]))))
    rm = float(np.max(np.abs(F.covariance([margin])))) if r0 > 0 else 0.0
    ratio = rm / r0 if r0 > 0 else 0.0
    return {"margin": margin, "covariance_ratio": ratio, "decayed": ratio <= DECAY_RATIO}


@dataclass(frozen=True)
class SimulationConfig:
    window: tuple
    time_step: float
    n_replications: int = 10_000
    seed: int = 0
    chunk: int = CHUNK

    def __post_init__(self):
        lo, hi = (float(x) for x in self.window)
        if not hi > lo:
            raise ModelError(f"window {self.window} must have t_max > t_min")
        if not self.time_step > 0:
            raise ModelError("time_step must be positive")
        if int(self.n_replications) < 1:
            raise ModelError("n_replications must be positive")
        object.__setattr__(self, "window", (lo, hi))
        object.__setattr__(self, "n_replications", int(self.n_replications))
        object.__setattr__(self, "seed", int(self.seed) % 2**64)

    @classmethod
    def around(cls, S: MissingSet, F: SpectralDensity, time_step: float, margin_scales: float = 5.0,
               **kw) -> "SimulationConfig":
        """Window extending ``margin_scales`` correlation scales beyond ``S``, snapped to the lattice."""
        scale = max(correlation_scale(F, time_step), time_step)
        lo = S.intervals[0][0] - margin_scales * scale
        hi = S.intervals[-1][1] + margin_scales * scale
        return cls((math.floor(lo / time_step) * time_step, math.ceil(hi / time_step) * time_step),
                   time_step, **kw)

    def times(self) -> np.ndarray:
        k0 = int(round(self.window[0] / self.time_step))
        k1 = int(round(self.window[1] / self.time_step))
        return np.arange(k0, k1 + 1) * self.time_step

    def check(self, S: MissingSet, F: SpectralDensity) -> dict:
        """Verify ``S`` sits strictly inside the window with enough margin."""
        lo, hi = self.window
        s_lo, s_hi = S.intervals[0][0], S.intervals[-1][1]
        if not (lo < s_lo and s_hi < hi):
            raise ModelError(f"missing set [{s_lo}, {s_hi}] is not strictly inside window {self.window}")
        scale = correlation_scale(F, self.time_step)
        margin = min(s_lo - lo, hi - s_hi)
        if margin < MARGIN_SCALES * scale - 1e-9:
            raise ModelError(
                f"window margin {margin:.4g} is below {MARGIN_SCALES:g} correlation scales ({scale:.4g})"
            )
        out = decay_diagnostic(F, margin)
        out["correlation_scale"] = scale
        return out


@dataclass
class EnsembleResult:
    empirical_mse: float
    std_error: float
    theoretical_delta: float
    z_score: float
    n_replications: int
    mode: str = "spectral"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Synthesis:
    """Merged-edge increments and paths for one block of replications."""

    times: np.ndarray
    xi: np.ndarray  # (reps, n_times, T)
    eta: np.ndarray
    z_xi: np.ndarray = field(repr=False)  # (reps, N, T)
    z_eta: np.ndarray = field(repr=False)


def _check_lattice(grid: FrequencyGrid, time_step: float):
    if abs(grid.lambda_max * time_step - math.pi) > 1e-9 * math.pi:
        raise GridMismatch(
            f"simulation needs lambda_max * time_step = pi, got {grid.lambda_max * time_step:.12g}"
        )


def _merged_weights(grid: FrequencyGrid) -> np.ndarray:
    w = grid.weights[:-1].copy()
    w[0] += grid.weights[-1]
    return w


def _factor(F: SpectralDensity, weights: np.ndarray) -> np.ndarray:
    """Square roots ``L_j`` with ``L_j L_j^H = (w_j / 2pi) F_j``; PSD-safe via eigh."""
    X = F.samples[:-1] * (weights / (2 * np.pi))[:, None, None]
    X = 0.5 * (X + np.conj(np.swapaxes(X, 1, 2)))
    ev, V = np.linalg.eigh(X)
    return V * np.sqrt(np.clip(ev, 0.0, None))[:, None, :]


def _increments(rng: np.random.Generator, L: np.ndarray) -> np.ndarray:
    """One draw of conjugate-symmetric increments on the ``N`` merged nodes."""
    N, T, _ = L.shape
    half = N // 2
    pos = np.arange(half + 1, N)  # lambda > 0
    u = rng.standard_normal((pos.size, T)) + 1j * rng.standard_normal((pos.size, T))
    Z = np.zeros((N, T), dtype=complex)
    Z[pos] = np.einsum("nij,nj->ni", L[pos], u) / math.sqrt(2.0)
    Z[N - pos] = np.conj(Z[pos])
    for j in (0, half):  # band edge and zero frequency carry real increments
        Z[j] = np.real(L[j] @ rng.standard_normal(T))
    return Z


def _paths(Z: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``x(t_k) = sum_j e^{i lambda_j t_k} Z_j`` for lattice indices ``k``."""
    N = Z.shape[-2]
    full = np.fft.ifft(Z, axis=-2) * N
    sign = np.where(k % 2 == 0, 1.0, -1.0)[:, None]
    return np.real(full[..., k % N, :]) * sign


def replication_rng(seed: int, r: int) -> np.random.Generator:
    """Independent substream ``r`` of the master seed (same as ``SeedSequence(seed).spawn``)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))


def simulate_pair(F: SpectralDensity, G: SpectralDensity, cfg: SimulationConfig,
                  replications: range | None = None) -> Synthesis:
    """Paths of the signal ``xi`` and independent noise ``eta`` on the window lattice."""
    grid = F.grid
    _check_lattice(grid, cfg.time_step)
    reps = range(cfg.n_replications) if replications is None else replications
    w = _merged_weights(grid)
    LF, LG = _factor(F, w), _factor(G.resample(grid), w)
    N = grid.n_points - 1
    times = cfg.times()
    if times[-1] - times[0] >= N * cfg.time_step:
        raise GridMismatch("window is longer than the synthesis period; raise n_points")
    k = np.rint(times / cfg.time_step).astype(int)
    zx, ze = [], []
    for r in reps:
        rng = replication_rng(cfg.seed, r)
        zx.append(_increments(rng, LF))
        ze.append(_increments(rng, LG))
    zx, ze = np.array(zx), np.array(ze)
    return Synthesis(times, _paths(zx, k), _paths(ze, k), zx, ze)


def merged_characteristic(h: np.ndarray) -> np.ndarray:
    """``h`` on the ``N`` synthesis nodes (band edges share one node)."""
    return np.asarray(h)[:-1]


def time_weights(h: np.ndarray, grid: FrequencyGrid, times: np.ndarray) -> np.ndarray:
    """Lattice weights ``g_k`` with ``sum_k g_k e^{i lambda t_k} = h`` over one period."""
    hm = merged_characteristic(h)
    lam = grid.nodes[:-1]
    ph = np.exp(-1j * np.outer(times, lam))
    return np.real(ph @ hm) / hm.shape[0]


def apply_estimate(h: np.ndarray, data, mode: str = "spectral", grid: FrequencyGrid | None = None,
                   S: MissingSet | None = None) -> np.ndarray:
    """Linear estimate per replication.

    ``spectral``: ``data`` is a :class:`Synthesis` (or a pair of increment arrays)
    and ``h`` is applied to ``Z_xi + Z_eta``.  ``time``: ``data`` is a
    :class:`Synthesis`; ``h`` is turned into lattice weights on the window with
    the nodes inside ``S`` masked out.
    """
    h = np.asarray(h)
    if mode == "spectral":
        zx, ze = (data.z_xi, data.z_eta) if isinstance(data, Synthesis) else data
        hm = merged_characteristic(h)
        if hm.shape != zx.shape[-2:]:
            raise GridMismatch(f"characteristic has shape {h.shape}, increments {zx.shape[-2:]}")
        return np.real(np.einsum("ni,rni->r", hm, zx + ze))
    if mode == "time":
        if grid is None or S is None:
            raise ModelError("time mode needs the frequency grid and the missing set")
        if h.shape[0] != grid.n_points:
            raise GridMismatch(f"characteristic has {h.shape[0]} nodes, grid has {grid.n_points}")
        g = time_weights(h, grid, data.times)
        g[S.contains(data.times)] = 0.0
        return np.einsum("ki,rki->r", g, data.xi + data.eta)
    raise ModelError(f"unknown mode {mode!r}")


def functional_value(data: Synthesis, a: WeightFunction) -> np.ndarray:
    """``sum_j w_j a(t_j)^T xi(t_j)`` over the nodes of ``S`` (which must lie on the lattice)."""
    S = a.S
    idx = np.rint((S.nodes - data.times[0]) / (data.times[1] - data.times[0])).astype(int)
    if np.any(idx < 0) or np.any(idx >= data.times.size) or \
            np.max(np.abs(data.times[idx] - S.nodes)) > 1e-9:
        raise GridMismatch("missing-set nodes do not lie on the simulation lattice")
    return np.einsum("k,ki,rki->r", S.weights, a.values, data.xi[:, idx, :])


def empirical_mse(F: SpectralDensity, G: SpectralDensity, h: np.ndarray, a: WeightFunction,
                  S: MissingSet, cfg: SimulationConfig, theoretical_delta: float,
                  mode: str = "spectral") -> EnsembleResult:
    if a.S != S:
        a = a.resample(S)
    errs = []
    for start in range(0, cfg.n_replications, cfg.chunk):
        block = range(start, min(start + cfg.chunk, cfg.n_replications))
        data = simulate_pair(F, G, cfg, block)
        est = apply_estimate(h, data, mode, F.grid, S)
        errs.append((functional_value(data, a) - est) ** 2)
    sq = np.concatenate(errs)
    mean = float(np.mean(sq))
    se = float(np.std(sq, ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else float("nan")
    z = (mean - theoretical_delta) / se if se and se > 0 else float("nan")
    return EnsembleResult(mean, se, float(theoretical_delta), float(z), sq.size, mode)


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleResult:
    mse: float
    variance: float
    jitter: float
    n_observed: int
    n_target: int


def _cov_blocks(R_fn, ta: np.ndarray, tb: np.ndarray, dim: int, step: float) -> np.ndarray:
    ka = np.rint(ta / step).astype(np.int64)
    kb = np.rint(tb / step).astype(np.int64)
    dk = ka[:, None] - kb[None, :]
    uniq, inv = np.unique(dk, return_inverse=True)
    R = np.real(R_fn(uniq * step))
    blocks = R[inv.reshape(dk.shape)]  # (na, nb, T, T)
    return blocks.transpose(0, 2, 1, 3).reshape(ta.size * dim, tb.size * dim)


def gaussian_oracle(F: SpectralDensity, G: SpectralDensity | None, S: MissingSet, a: WeightFunction,
                    window=(-6.0, 5.0), fine_step: float = 0.01) -> OracleResult:
    """MSE of the best linear predictor of the functional from all window samples off ``S``.

    Covariances come from the densities' closed forms when available, else
    from quadrature on their grid.
    """
    dim = F.dim
    lo, hi = window
    k0, k1 = int(math.ceil(lo / fine_step - 1e-9)), int(math.floor(hi / fine_step + 1e-9))
    t = np.arange(k0, k1 + 1) * fine_step
    Sf = S.with_step(fine_step)
    if not Sf.is_lattice(fine_step):
        raise GridMismatch("missing-set endpoints must be multiples of fine_step")
    af = a.resample(Sf) if a.S != Sf else a
    obs = t[~Sf.contains(t)]
    targ = Sf.nodes
    wa = (af.values * Sf.weights[:, None]).reshape(-1)
    if not np.any(wa):
        return OracleResult(0.0, 0.0, 0.0, obs.size, targ.size)

    def Rx(tau):
        return F.covariance(tau)

    def Rxy(tau):
        out = F.covariance(tau)
        return out if G is None else out + G.covariance(tau)

    Coo = _cov_blocks(Rxy, obs, obs, dim, fine_step)
    Cto = _cov_blocks(Rx, targ, obs, dim, fine_step)
    Ctt = _cov_blocks(Rx, targ, targ, dim, fine_step)
    b = wa @ Cto
    var = float(wa @ Ctt @ wa)
    Coo = 0.5 * (Coo + Coo.T)
    jitter = 0.0
    try:
        fac = linalg.cho_factor(Coo, lower=True, check_finite=False)
    except linalg.LinAlgError:
        jitter = 1e-10 * float(np.trace(Coo))
        fac = linalg.cho_factor(Coo + jitter * np.eye(Coo.shape[0]), lower=True, check_finite=False)
    mse_val = var - float(b @ linalg.cho_solve(fac, b, check_finite=False))
    return OracleResult(mse_val, var, jitter, obs.size, targ.size)
