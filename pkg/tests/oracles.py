"""Independent reference computations used by the tests.

Nothing here imports the package's numerical routines; each function
recomputes its quantity from first principles (brute-force enumeration,
closed forms, dense linear algebra, scipy integrators).
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm, null_space


def window_expectations(rate, half_width: int, r: float) -> tuple[float, float]:
    """``(B(r), D(r))`` by summing ``rate(window) * P_r(window)`` over all windows."""
    n = 2 * half_width + 1
    B = D = 0.0
    for w in itertools.product((0, 1), repeat=n):
        ones = sum(w)
        p = r ** ones * (1 - r) ** (n - ones)
        if w[half_width] == 0:
            B += rate(w) * p
        else:
            D += rate(w) * p
    return B, D


def double_well_F(a: float, b: float, r):
    s = 2 * np.asarray(r, dtype=float) - 1
    return a * s - b * s ** 3


def constant_profile_distance(a: float, b: float, K: int = 16) -> float:
    """Distance of two constant profiles from the integrals of the modes.

    ``int cos(pi k u) du = 0`` for ``k >= 1`` and ``int sin(pi k u) du =
    (1 - cos(pi k)) / (pi k)``.
    """
    total = 0.0
    for i in range(K):
        k = i // 2
        if i % 2 == 0:
            integral = 1.0 if k == 0 else math.sin(math.pi * k) / (math.pi * k)
        else:
            integral = 0.0 if k == 0 else (1 - math.cos(math.pi * k)) / (math.pi * k)
        total += 2.0 ** -i * abs(integral)
    return abs(a - b) * total


def dense_generator(rate, half_width: int, N: int) -> np.ndarray:
    """Dense generator with the site-``x`` bit as ``2**x`` in the state index."""
    S = 2 ** N
    Q = np.zeros((S, S))
    for s in range(S):
        eta = [(s >> x) & 1 for x in range(N)]
        for x in range(N):
            y = (x + 1) % N
            if eta[x] != eta[y]:
                Q[s, s ^ (1 << x) ^ (1 << y)] += N * N / 2
            w = tuple(eta[(x + i) % N] for i in range(-half_width, half_width + 1))
            Q[s, s ^ (1 << x)] += rate(w)
        Q[s, s] = -Q[s].sum()
    return Q


def stationary_dense(Q: np.ndarray) -> np.ndarray:
    v = null_space(Q.T)[:, 0]
    return v / v.sum()


def mass_chain_tail(N: int, horizon: float, start: int, level: int,
                    kappa: float = 1.0) -> float:
    """``P(n_T >= level)`` for the birth-death chain of the particle count.

    With a constant flip rate each empty site fills at rate ``kappa`` and each
    particle leaves at rate ``kappa``; exchanges do not change the count.
    """
    n = np.arange(N + 1)
    Q = np.diag(kappa * (N - n[:-1]).astype(float), 1) + np.diag(kappa * n[1:].astype(float), -1)
    Q -= np.diag(Q.sum(axis=1))
    p0 = np.zeros(N + 1)
    p0[start] = 1.0
    p = p0 @ expm(Q * horizon)
    return float(p[level:].sum())


def ode_path(F, r0: float, times) -> np.ndarray:
    sol = solve_ivp(lambda t, y: [F(y[0])], (times[0], times[-1]), [r0], t_eval=times,
                    rtol=1e-12, atol=1e-14, method="DOP853")
    return sol.y[0]


def held_rate(B: float, D: float, horizon: float = 1.0) -> float:
    return horizon * (math.sqrt(B) - math.sqrt(D)) ** 2


def binomial_two_sided_tail(N: int, p: float, eps: float) -> float:
    """``P(|Bin(N,p)/N - p| >= eps)`` summed exactly in log space."""
    k = np.arange(N + 1)
    logpmf = (np.array([math.lgamma(N + 1) - math.lgamma(i + 1) - math.lgamma(N - i + 1)
                        for i in k]) + k * math.log(p) + (N - k) * math.log(1 - p))
    mask = np.abs(k / N - p) >= eps
    return float(np.exp(logpmf[mask]).sum())
