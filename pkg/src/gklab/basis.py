"""Tensor-product test functions on ``[0, T] x torus``.

Space: ``1, cos(2 pi k u), sin(2 pi k u)`` for ``k = 1..K_s``.
Time: piecewise-linear hats on ``K_t`` equal intervals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import cell_centers


def space_matrix(u: np.ndarray, K_s: int, deriv: int = 0) -> np.ndarray:
    """Basis values (or derivatives) at points ``u``, shape ``(len(u), 2K_s+1)``."""
    u = np.asarray(u, dtype=float).ravel()
    out = np.empty((u.size, 2 * K_s + 1))
    out[:, 0] = 1.0 if deriv == 0 else 0.0
    for k in range(1, K_s + 1):
        w = 2.0 * np.pi * k
        c, s = np.cos(w * u), np.sin(w * u)
        if deriv == 0:
            out[:, 2 * k - 1], out[:, 2 * k] = c, s
        elif deriv == 1:
            out[:, 2 * k - 1], out[:, 2 * k] = -w * s, w * c
        elif deriv == 2:
            out[:, 2 * k - 1], out[:, 2 * k] = -w * w * c, -w * w * s
        else:
            raise ValueError("deriv must be 0, 1 or 2")
    return out


def time_matrix(t: np.ndarray, K_t: int, horizon: float, deriv: int = 0) -> np.ndarray:
    """Hat functions (or their one-sided derivatives) at times ``t``.

    Derivatives at interior nodes are taken from the right, at ``T`` from
    the left.
    """
    t = np.asarray(t, dtype=float).ravel()
    if horizon <= 0:
        out = np.zeros((t.size, K_t + 1))
        if deriv == 0:
            out[:, 0] = 1.0
        return out
    h = horizon / K_t
    x = np.clip(t / h, 0.0, K_t)
    i = np.minimum(np.floor(x).astype(int), K_t - 1)
    frac = x - i
    out = np.zeros((t.size, K_t + 1))
    rows = np.arange(t.size)
    if deriv == 0:
        out[rows, i] = 1.0 - frac
        out[rows, i + 1] += frac
    elif deriv == 1:
        out[rows, i] = -1.0 / h
        out[rows, i + 1] += 1.0 / h
    else:
        raise ValueError("deriv must be 0 or 1")
    return out


@dataclass
class TestFunction:
    """Smooth-in-space, piecewise-linear-in-time field ``G(t, u)``."""

    coef: np.ndarray
    horizon: float

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self) -> None:
        self.coef = np.atleast_2d(np.asarray(self.coef, dtype=float))
        if self.coef.shape[1] % 2 != 1:
            raise ValueError("space dimension must be 2*K_s + 1")
        if not np.all(np.isfinite(self.coef)):
            raise ValueError("coefficients must be finite")

    @property
    def K_s(self) -> int:
        return (self.coef.shape[1] - 1) // 2

    @property
    def K_t(self) -> int:
        return self.coef.shape[0] - 1

    @classmethod
    def zeros(cls, K_s: int, K_t: int, horizon: float) -> "TestFunction":
        return cls(np.zeros((K_t + 1, 2 * K_s + 1)), horizon)

    @classmethod
    def constant(cls, value: float, K_s: int, K_t: int, horizon: float) -> "TestFunction":
        c = np.zeros((K_t + 1, 2 * K_s + 1))
        c[:, 0] = value
        return cls(c, horizon)

    @classmethod
    def from_function(cls, fn, K_s: int, K_t: int, horizon: float,
                      quad: int = 512) -> "TestFunction":
        """Interpolate in time at the hat nodes, project in space."""
        nodes = np.linspace(0.0, horizon, K_t + 1)
        u = (np.arange(quad) + 0.5) / quad
        vals = np.asarray(fn(nodes[:, None], u[None, :]), dtype=float) * np.ones((K_t + 1, quad))
        S = space_matrix(u, K_s)
        norms = np.full(2 * K_s + 1, 0.5)
        norms[0] = 1.0
        return cls(vals @ S / quad / norms, horizon)

    def _eval(self, t, u, dt: int, du: int) -> np.ndarray:
        t, u = np.broadcast_arrays(np.asarray(t, float), np.asarray(u, float))
        Tm = time_matrix(t, self.K_t, self.horizon, dt)
        Sm = space_matrix(u, self.K_s, du)
        return np.einsum("ni,ij,nj->n", Tm, self.coef, Sm).reshape(t.shape)

    def __call__(self, t, u) -> np.ndarray:
        return self._eval(t, u, 0, 0)

    def grad(self, t, u) -> np.ndarray:
        return self._eval(t, u, 0, 1)

    def lap(self, t, u) -> np.ndarray:
        return self._eval(t, u, 0, 2)

    def dt(self, t, u) -> np.ndarray:
        return self._eval(t, u, 1, 0)

    def grid(self, times, J: int) -> np.ndarray:
        """Values at ``times`` x cell centres, shape ``(len(times), J)``."""
        Tm = time_matrix(times, self.K_t, self.horizon)
        return Tm @ self.coef @ space_matrix(cell_centers(J), self.K_s).T

    @property
    def sup_bound(self) -> float:
        """Cheap upper bound on ``max |G|``."""
        return float(np.max(np.abs(self.coef).sum(axis=1)))
