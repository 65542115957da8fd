"""Frequency grid, missing-interval set and weight functions.

All integrals over the real frequency line are replaced by a trapezoid rule on
a symmetric uniform grid ``[-lambda_max, lambda_max]``.  All integrals over the
missing set ``S`` use a composite trapezoid rule on each interval.

When ``lambda_max * time_step == pi`` and every interval endpoint is a multiple
of ``time_step``, the two grids are *lattice-consistent*: exponentials
``exp(i*lambda*t)`` at lattice times are exactly periodic over the band, and
the discretized problem coincides with interpolation of the sampled process.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ModelError

_LATTICE_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform symmetric frequency grid with trapezoid weights.

    Args:
        lambda_max: truncation frequency (rad / time unit).
        n_points: number of nodes; must be odd so that 0 is a node.
    """

    lambda_max: float
    n_points: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.lambda_max > 0:
            raise ModelError(f"lambda_max must be positive, got {self.lambda_max}")
        n = int(self.n_points)
        if n < 3 or n % 2 == 0:
            raise ModelError(f"n_points must be odd and >= 3, got {self.n_points}")
        object.__setattr__(self, "n_points", n)
        lam = np.linspace(-self.lambda_max, self.lambda_max, n)
        lam[n // 2] = 0.0
        w = np.full(n, 2.0 * self.lambda_max / (n - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        object.__setattr__(self, "nodes", _frozen(lam))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def nyquist(cls, time_step: float, n_points: int = 4097) -> "FrequencyGrid":
        """Grid whose band edge is the Nyquist frequency of ``time_step``."""
        return cls(math.pi / time_step, n_points)

    @property
    def spacing(self) -> float:
        return 2.0 * self.lambda_max / (self.n_points - 1)

    @property
    def center(self) -> int:
        return self.n_points // 2

    @property
    def lattice_step(self) -> float:
        """Time step for which this grid is lattice-consistent."""
        return math.pi / self.lambda_max

    def mirror(self) -> np.ndarray:
        """Index map ``i -> j`` with ``nodes[j] == -nodes[i]``."""
        return np.arange(self.n_points)[::-1]

    def refined(self, factor: int = 2) -> "FrequencyGrid":
        return FrequencyGrid(self.lambda_max, (self.n_points - 1) * factor + 1)

    def to_dict(self) -> dict:
        return {"lambda_max": float(self.lambda_max), "n_points": self.n_points}


@dataclass(frozen=True)
class MissingSet:
    """Finite union of disjoint closed intervals ``[-M_l - N_l, -M_l]``.

    Each interval is split into ``round(N_l / time_step)`` equal pieces
    (at least one), so the local step equals ``time_step`` whenever the
    length is a multiple of it.
    """

    intervals: tuple
    time_step: float
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    interval_index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ivs = tuple((float(l), float(r)) for l, r in self.intervals)
        if not ivs:
            raise ModelError("missing set needs at least one interval")
        if not self.time_step > 0:
            raise ModelError(f"time_step must be positive, got {self.time_step}")
        for l, r in ivs:
            if not r > l:
                raise ModelError(f"interval [{l}, {r}] must have right > left")
            if r > 0:
                raise ModelError(f"interval [{l}, {r}] must lie in t <= 0")
        ivs = tuple(sorted(ivs))
        for (l1, r1), (l2, r2) in zip(ivs, ivs[1:]):
            if not l2 > r1:
                raise ModelError(f"intervals [{l1}, {r1}] and [{l2}, {r2}] overlap or touch")
        object.__setattr__(self, "intervals", ivs)

        nodes, weights, idx = [], [], []
        for k, (l, r) in enumerate(ivs):
            pieces = max(1, int(round((r - l) / self.time_step)))
            t = np.linspace(l, r, pieces + 1)
            h = (r - l) / pieces
            w = np.full(pieces + 1, h)
            w[0] *= 0.5
            w[-1] *= 0.5
            nodes.append(t)
            weights.append(w)
            idx.append(np.full(pieces + 1, k))
        object.__setattr__(self, "nodes", _frozen(np.concatenate(nodes)))
        object.__setattr__(self, "weights", _frozen(np.concatenate(weights)))
        object.__setattr__(self, "interval_index", _frozen(np.concatenate(idx)))

    @classmethod
    def from_offsets(cls, M: Sequence[float], N: Sequence[float], time_step: float) -> "MissingSet":
        """Build from the offsets ``M_l >= 0`` and lengths ``N_l > 0``."""
        return cls(tuple((-m - n, -m) for m, n in zip(M, N)), time_step)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def length(self) -> float:
        return float(sum(r - l for l, r in self.intervals))

    @property
    def s(self) -> int:
        return len(self.intervals)

    def is_lattice(self, step: float | None = None) -> bool:
        """True if every node is an integer multiple of ``step``."""
        step = self.time_step if step is None else step
        q = self.nodes / step
        return bool(np.all(np.abs(q - np.round(q)) < _LATTICE_TOL * max(1.0, np.abs(q).max())))

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for l, r in self.intervals:
            out |= (t >= l - 1e-12) & (t <= r + 1e-12)
        return out

    def with_step(self, time_step: float) -> "MissingSet":
        return MissingSet(self.intervals, time_step)

    def to_list(self) -> list:
        return [[l, r] for l, r in self.intervals]


@dataclass(frozen=True)
class WeightFunction:
    """Real vector weight ``a(t)`` sampled on the nodes of a missing set.

    ``values`` has shape ``(S.size, T)``.
    """

    S: MissingSet
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.S.size:
            raise ModelError(f"weight function has {v.shape[0]} rows, missing set has {self.S.size} nodes")
        if not np.all(np.isfinite(v)):
            raise ModelError("weight function values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, S: MissingSet, value=1.0, dim: int = 1) -> "WeightFunction":
        vec = np.broadcast_to(np.asarray(value, dtype=float), (dim,))
        return cls(S, np.tile(vec, (S.size, 1)))

    @classmethod
    def from_function(cls, S: MissingSet, fn: Callable) -> "WeightFunction":
        """``fn`` maps an array of times to shape ``(m,)`` or ``(m, T)``."""
        return cls(S, np.asarray(fn(np.asarray(S.nodes)), dtype=float))

    def at(self, t) -> np.ndarray:
        """Evaluate by piecewise-linear interpolation; zero outside ``S``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((t.size, self.dim))
        for k, (l, r) in enumerate(self.S.intervals):
            sel = self.S.interval_index == k
            tk, vk = self.S.nodes[sel], self.values[sel]
            inside = (t >= l - 1e-12) & (t <= r + 1e-12)
            for d in range(self.dim):
                out[inside, d] = np.interp(t[inside], tk, vk[:, d])
        return out

    def resample(self, S: MissingSet) -> "WeightFunction":
        return WeightFunction(S, self.at(S.nodes))

    def scaled(self, c: float) -> "WeightFunction":
        return WeightFunction(self.S, c * self.values)

    def __add__(self, other: "WeightFunction") -> "WeightFunction":
        if other.S != self.S:
            raise ModelError("weight functions live on different missing sets")
        return WeightFunction(self.S, self.values + other.values)

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def conditions(self) -> dict:
        """Both integrability quantities for ``a(t)``.

        The second one uses ``|t|`` in place of ``t``; it is informational and
        never used to reject input.
        """
        w = self.S.weights
        l1 = float(np.sum(w[:, None] * np.abs(self.values)))
        tw = float(np.sum(w * np.abs(self.S.nodes) * np.sum(self.values**2, axis=1)))
        return {"l1": l1, "abs_t_weighted_l2": tw}
