"""Grid fields, trajectories and the weak distance between measures."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised when fields or trajectories live on incompatible grids."""


def cell_centers(J: int) -> np.ndarray:
    return (np.arange(J) + 0.5) / J


def as_field(values, J: int | None = None) -> np.ndarray:
    """Validate a density field: finite values on a 1-D grid."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise GridError("density field must be a non-empty 1-D array")
    if J is not None and arr.size != J:
        raise GridError(f"expected {J} cells, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise GridError("density field has non-finite values")
    return arr


def profile(fn, J: int) -> np.ndarray:
    """Sample ``fn`` at cell centres."""
    return np.asarray(fn(cell_centers(J)), dtype=float) * np.ones(J)


def block_average(values: np.ndarray, J: int) -> np.ndarray:
    """Average a fine grid field onto ``J`` cells (``J`` must divide the size)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if n % J:
        raise GridError(f"{J} cells do not divide {n}")
    return values.reshape(values.shape[:-1] + (J, n // J)).mean(axis=-1)


@dataclass
class Trajectory:
    """Density fields on a common space grid at increasing times."""

    times: np.ndarray
    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=float))
        if self.times.ndim != 1 or self.frames.shape[0] != self.times.size:
            raise GridError("one frame per time is required")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise GridError("times must be strictly increasing")

    @property
    def J(self) -> int:
        return self.frames.shape[1]

    @property
    def K(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def dt(self) -> float:
        self.require_uniform()
        return self.horizon / self.K if self.K else 0.0

    @property
    def final(self) -> np.ndarray:
        return self.frames[-1]

    def require_uniform(self, rtol: float = 1e-9) -> None:
        if self.K == 0:
            return
        steps = np.diff(self.times)
        if np.max(np.abs(steps - steps.mean())) > rtol * max(steps.mean(), 1e-300):
            raise GridError("trajectory time grid is not uniform")

    def is_interior(self, margin: float) -> bool:
        return bool(self.frames.min() >= margin and self.frames.max() <= 1 - margin)

    def copy(self, frames: np.ndarray | None = None, **meta) -> "Trajectory":
        f = self.frames.copy() if frames is None else frames
        return Trajectory(self.times.copy(), f, {**self.meta, **meta})

    @classmethod
    def held(cls, values: np.ndarray, horizon: float, K: int) -> "Trajectory":
        """Static path: the same frame at ``K + 1`` uniform times."""
        values = as_field(values)
        return cls(np.linspace(0.0, horizon, K + 1), np.tile(values, (K + 1, 1)))

    @classmethod
    def from_function(cls, fn, horizon: float, K: int, J: int) -> "Trajectory":
        t = np.linspace(0.0, horizon, K + 1)
        u = cell_centers(J)
        return cls(t, np.asarray(fn(t[:, None], u[None, :]), dtype=float)
                   * np.ones((K + 1, J)))


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Atoms of mass ``1/N`` at the occupied sites ``x/N``."""

    sites: np.ndarray
    N: int

    @classmethod
    def from_configuration(cls, eta: np.ndarray) -> "EmpiricalMeasure":
        eta = np.asarray(eta)
        return cls(np.flatnonzero(eta), eta.size)

    @property
    def mass(self) -> float:
        return self.sites.size / self.N

    def pair(self, fn) -> float:
        return float(np.sum(fn(self.sites / self.N)) / self.N)


def _mode_integrals(J: int, K: int) -> np.ndarray:
    """Exact cell integrals of the distance basis, shape (K, J).

    Basis index ``i = 2k`` is ``cos(pi k u)``, ``i = 2k + 1`` is ``sin(pi k u)``.
    """
    edges = np.arange(J + 1) / J
    out = np.zeros((K, J))
    for i in range(K):
        k = i // 2
        if k == 0:
            out[i] = np.diff(edges) if i % 2 == 0 else 0.0
            continue
        w = np.pi * k
        if i % 2 == 0:
            out[i] = np.diff(np.sin(w * edges)) / w
        else:
            out[i] = -np.diff(np.cos(w * edges)) / w
    return out


def _mode_values(u: np.ndarray, K: int) -> np.ndarray:
    out = np.empty((K, u.size))
    for i in range(K):
        k = i // 2
        out[i] = np.cos(np.pi * k * u) if i % 2 == 0 else np.sin(np.pi * k * u)
    return out


def pairings(pi, K: int) -> np.ndarray:
    """Pairings of a field or empirical measure with the first ``K`` modes."""
    if isinstance(pi, EmpiricalMeasure):
        return _mode_values(pi.sites / pi.N, K).sum(axis=1) / pi.N
    values = as_field(pi)
    return _mode_integrals(values.size, K) @ values


def measure_distance(pi1, pi2, K: int = 16) -> float:
    """Weighted sum of mode pairing differences with weights ``2**-i``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    diff = np.abs(pairings(pi1, K) - pairings(pi2, K))
    return float(np.sum(diff * 0.5 ** np.arange(K)))


def path_distance(a: Trajectory, b: Trajectory, K: int = 16) -> float:
    """Largest frame-wise distance between two paths on the same time grid."""
    if a.frames.shape[0] != b.frames.shape[0]:
        raise GridError("paths have different numbers of frames")
    return max(measure_distance(x, y, K) for x, y in zip(a.frames, b.frames))


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L1 distance of two cell-average fields on the torus."""
    a = as_field(a)
    b = as_field(b, a.size)
    return float(np.mean(np.abs(a - b)))
