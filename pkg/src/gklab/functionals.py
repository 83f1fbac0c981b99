"""Energy, the pairing functional and three routes to the rate function.

All quadratures use cell midpoints in space and the trapezoid rule in time.
The discrete pairing functional telescopes the time-derivative term exactly,
so the slice-wise optimality condition of its supremum is the same discrete
elliptic equation solved by the explicit route.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import TestFunction, space_matrix, time_matrix
from .fields import GridError, Trajectory, as_field, cell_centers
from .pde import laplacian
from .rates import RateModel

log = logging.getLogger(__name__)

G_BOX = 30.0


class RateError(RuntimeError):
    """Raised when a rate route cannot be applied to a path."""


@dataclass
class RateReport:
    value: float
    route: str
    maximizer: object = None
    iterations: int = 0
    gradient_norm: float = 0.0
    converged: bool = True
    energy: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.value < 0:
            if self.value >= -1e-9:
                self.value = 0.0
            else:
                self.details["defect"] = f"negative rate {self.value:.3e}"

    def as_record(self) -> dict:
        return {"type": "rate", "route": self.route, "value": self.value,
                "iterations": self.iterations, "gradient_norm": self.gradient_norm,
                "converged": self.converged, "energy": self.energy,
                **{k: v for k, v in self.details.items() if np.isscalar(v)}}


# ------------------------------------------------------------- helpers
def trapezoid_weights(K: int, dt: float) -> np.ndarray:
    w = np.full(K + 1, dt)
    if K == 0:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * dt
    return w


def harmonic_faces(rho: np.ndarray) -> np.ndarray:
    """Mobility at face ``j + 1/2`` as the harmonic mean of its two cells."""
    a = rho * (1.0 - rho)
    b = np.roll(a, -1, axis=-1)
    s = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, 2.0 * a * b / np.where(s > 0, s, 1.0), 0.0)


def forward_diff(v: np.ndarray) -> np.ndarray:
    return np.roll(v, -1, axis=-1) - v


def centered_gradient(rho: np.ndarray) -> np.ndarray:
    J = rho.shape[-1]
    return (np.roll(rho, -1, axis=-1) - np.roll(rho, 1, axis=-1)) * (0.5 * J)


def time_derivative(frames: np.ndarray, dt: float) -> np.ndarray:
    """Centred differences inside, second-order one-sided at both ends."""
    if frames.shape[0] < 3:
        return np.gradient(frames, dt, axis=0, edge_order=1)
    return np.gradient(frames, dt, axis=0, edge_order=2)


def f_cost(a: np.ndarray) -> np.ndarray:
    """``1 - e^a + a e^a`` without cancellation near zero."""
    a = np.asarray(a, dtype=float)
    em1 = np.expm1(a)
    out = a - em1 + a * em1
    small = np.abs(a) < 1e-3
    if np.any(small):
        s = a[small]
        out[small] = s * s * (0.5 + s * (1.0 / 3.0 + s * (0.125 + s / 30.0)))
    return out


def _check_path(pi: Trajectory) -> None:
    pi.require_uniform()
    if pi.K < 1:
        raise GridError("need at least two frames")


# -------------------------------------------------------------- energy
def energy_direct(pi: Trajectory) -> float:
    """Time integral of the squared centred-difference gradient."""
    if pi.K == 0:
        return 0.0
    _check_path(pi)
    w = trapezoid_weights(pi.K, pi.dt)
    dens = np.mean(centered_gradient(pi.frames) ** 2, axis=1)
    return float(w @ dens)


def energy_variational(pi: Trajectory, K_s: int = 8, K_t: int = 16,
                       ridge: float = 1e-12) -> float:
    """Supremum of ``2<rho, grad G> - <G, G>`` over the tensor basis.

    With the antisymmetric centred difference, ``<rho, grad G> = -<grad rho, G>``
    on the grid, so the supremum is the squared norm of the projection of
    ``-grad rho`` onto the basis.
    """
    _check_path(pi)
    J, K = pi.J, pi.K
    w = trapezoid_weights(K, pi.dt)
    h = 1.0 / J
    Tm = time_matrix(pi.times, K_t, pi.horizon)
    Sm = space_matrix(cell_centers(J), K_s)
    y = -centered_gradient(pi.frames)
    gram_s = h * Sm.T @ Sm
    proj = h * y @ Sm  # (K+1, S)
    gram = np.einsum("k,ki,kj,ab->iajb", w, Tm, Tm, gram_s)
    n = Tm.shape[1] * Sm.shape[1]
    gram = gram.reshape(n, n)
    rhs = np.einsum("k,ki,ka->ia", w, Tm, proj).ravel()
    try:
        coef = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        log.warning("singular energy Gram matrix; adding ridge %g", ridge)
        coef = np.linalg.solve(gram + ridge * np.eye(n), rhs)
    return float(rhs @ coef)


# --------------------------------------------------- pairing functional
class PairingProblem:
    """Precomputed pieces of the discrete pairing functional for one path."""

    def __init__(self, pi: Trajectory, gamma: np.ndarray | None, m: RateModel,
                 K_s: int | None = None, K_t: int | None = None):
        _check_path(pi)
        self.pi = pi
        self.m = m
        J, K = pi.J, pi.K
        self.h = 1.0 / J
        self.w = trapezoid_weights(K, pi.dt)
        gamma = pi.frames[0] if gamma is None else as_field(gamma, J)
        f = pi.frames
        c = np.empty_like(f)
        c[0] = 0.5 * (f[0] + f[1]) - gamma
        c[1:-1] = 0.5 * (f[2:] - f[:-2])
        c[-1] = 0.5 * (f[-1] - f[-2])
        self.lin = c - self.w[:, None] * 0.5 * laplacian(f)
        self.B = m.B(f)
        self.D = m.D(f)
        self.chi_f = harmonic_faces(f)
        if K_s is not None:
            self.Tm = time_matrix(pi.times, K_t, pi.horizon)
            self.Sm = space_matrix(cell_centers(J), K_s)
            self.dS = forward_diff(self.Sm.T).T  # (J, S): differences along faces
            self.shape = (K_t + 1, 2 * K_s + 1)

    # grid-level evaluation
    def value_grid(self, G: np.ndarray) -> float:
        h = self.h
        dG = forward_diff(G)
        mob = 0.5 * np.sum(self.chi_f * dG * dG, axis=1) / h
        react = h * np.sum(self.B * np.expm1(G) + self.D * np.expm1(-G), axis=1)
        return float(h * np.sum(self.lin * G) - self.w @ (mob + react))

    def grad_grid(self, G: np.ndarray) -> np.ndarray:
        h = self.h
        flux = self.chi_f * forward_diff(G)
        Lg = np.roll(flux, 1, axis=1) - flux
        return (h * self.lin - self.w[:, None] * (Lg / h)
                - self.w[:, None] * h * (self.B * np.exp(G) - self.D * np.exp(-G)))

    # coefficient-level evaluation
    def G_of(self, theta: np.ndarray) -> np.ndarray:
        return self.Tm @ theta.reshape(self.shape) @ self.Sm.T

    def value(self, theta: np.ndarray) -> float:
        return self.value_grid(self.G_of(theta))

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return (self.Tm.T @ self.grad_grid(self.G_of(theta)) @ self.Sm).ravel()

    def hess(self, theta: np.ndarray) -> np.ndarray:
        G = self.G_of(theta)
        h = self.h
        q = self.B * np.exp(G) + self.D * np.exp(-G)
        A = (np.einsum("fa,kf,fb->kab", self.dS, self.chi_f / h, self.dS)
             + np.einsum("ja,kj,jb->kab", self.Sm, h * q, self.Sm))
        H = -np.einsum("k,ki,kj,kab->iajb", self.w, self.Tm, self.Tm, A)
        n = theta.size
        return H.reshape(n, n)


def _as_grid(G, pi: Trajectory) -> np.ndarray:
    if isinstance(G, TestFunction):
        return G.grid(pi.times, pi.J)
    if callable(G):
        u = cell_centers(pi.J)
        return np.asarray(G(pi.times[:, None], u[None, :]), float) * np.ones(pi.frames.shape)
    arr = np.asarray(G, dtype=float)
    if arr.ndim == 0:
        return np.full(pi.frames.shape, float(arr))
    if arr.shape != pi.frames.shape:
        raise GridError(f"test function grid {arr.shape} does not match path {pi.frames.shape}")
    return arr


def eval_JG(pi: Trajectory, G, gamma, m: RateModel) -> float:
    """Discrete pairing functional for a test function, callable or grid array."""
    gamma = as_field(gamma, pi.J) if gamma is not None else None
    prob = PairingProblem(pi, gamma, m)
    return prob.value_grid(_as_grid(G, pi))


# ---------------------------------------------------------- variational
def rate_variational(pi: Trajectory, gamma, m: RateModel, K_s: int = 8, K_t: int = 16,
                     max_iter: int = 100, gtol: float = 1e-9,
                     start: TestFunction | None = None) -> RateReport:
    """Maximize the pairing functional over the tensor basis.

    Newton ascent with backtracking line search; the box ``|G| <= 30`` is
    enforced along the search direction.
    """
    if not m.concave:
        warnings.warn(f"model {m.name!r} is not concave; the rate estimate is only a "
                      "lower bound on the supremum", RuntimeWarning, stacklevel=2)
    prob = PairingProblem(pi, gamma, m, K_s, K_t)
    n = prob.shape[0] * prob.shape[1]
    theta = np.zeros(n) if start is None else start.coef.ravel().copy()
    val = prob.value(theta)
    g = prob.grad(theta)
    gnorm = float(np.max(np.abs(g)))
    it = 0
    converged = gnorm < gtol
    while not converged and it < max_iter:
        it += 1
        H = prob.hess(theta)
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(-H + 1e-10 * np.eye(n), g)
        slope = float(g @ step)
        if slope <= 0 or not np.all(np.isfinite(step)):
            step, slope = g, float(g @ g)
        s = 1.0
        while s > 1e-12:
            trial = theta + s * step
            Gt = prob.G_of(trial)
            if np.max(np.abs(Gt)) <= G_BOX:
                tv = prob.value_grid(Gt)
                if tv >= val + 1e-4 * s * slope:
                    break
            s *= 0.5
        else:
            break
        gain = tv - val
        theta, val = trial, tv
        g = prob.grad(theta)
        gnorm = float(np.max(np.abs(g)))
        converged = gnorm < gtol or (gain < 1e-15 * max(1.0, abs(val)) and s == 1.0)
    maxi = TestFunction(theta.reshape(prob.shape), pi.horizon)
    return RateReport(val, "variational", maxi, it, gnorm, converged,
                      energy_direct(pi), {"K_s": K_s, "K_t": K_t})


# ------------------------------------------------------------- explicit
def _slice_newton(r: np.ndarray, B: np.ndarray, D: np.ndarray, chi_f: np.ndarray,
                  H0: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    """Solve ``L H / h^2 + B e^H - D e^-H = r`` for one slice.

    The left side is the gradient of a strictly convex potential, so damped
    Newton on that potential converges globally.
    """
    J = r.size
    J2 = float(J * J)
    idx = np.arange(J)
    nxt = (idx + 1) % J
    prv = (idx - 1) % J
    chi_prev = np.roll(chi_f, 1)
    Lmat = sp.csc_matrix(
        (np.concatenate([chi_f + chi_prev, -chi_f, -chi_prev]) * J2,
         (np.concatenate([idx, idx, idx]), np.concatenate([idx, nxt, prv]))),
        shape=(J, J))

    def potential(H):
        return 0.5 * H @ (Lmat @ H) + np.sum(B * np.exp(H) + D * np.exp(-H)) - r @ H

    H = H0.copy()
    res = Lmat @ H + B * np.exp(H) - D * np.exp(-H) - r
    err = float(np.max(np.abs(res)))
    it = 0
    while err >= tol and it < max_iter:
        it += 1
        A = Lmat + sp.diags(B * np.exp(H) + D * np.exp(-H))
        step = -spla.spsolve(A.tocsc(), res)
        phi = potential(H)
        slope = float(res @ step)
        s = 1.0
        while s > 1e-10:
            trial = H + s * step
            if np.max(np.abs(trial)) < 50:
                tres = Lmat @ trial + B * np.exp(trial) - D * np.exp(-trial) - r
                terr = float(np.max(np.abs(tres)))
                # near the root the potential is flat to rounding; trust the residual
                if (err < 1e-3 and terr < err) or potential(trial) <= phi + 1e-4 * s * slope:
                    break
            s *= 0.5
        H, res, err = trial, tres, terr
    return H, err, it


def invert_control(pi: Trajectory, m: RateModel, tol: float = 1e-9,
                   max_iter: int = 60, margin: float = 0.01) -> tuple[np.ndarray, float]:
    """Recover the control ``H`` that generates ``pi``, one time slice at a time."""
    _check_path(pi)
    if not pi.is_interior(margin):
        raise RateError(
            f"path touches the boundary (values must lie in [{margin}, {1 - margin}]); "
            "use rate_variational instead")
    f = pi.frames
    r = time_derivative(f, pi.dt) - 0.5 * laplacian(f)
    B, D = m.B(f), m.D(f)
    chi_f = harmonic_faces(f)
    Hs = np.empty_like(f)
    worst = 0.0
    for k in range(f.shape[0]):
        # pointwise optimum of the reaction part as a starting guess
        H0 = np.log((r[k] + np.sqrt(r[k] ** 2 + 4 * B[k] * D[k])) / (2 * B[k]))
        H, err, _ = _slice_newton(r[k], B[k], D[k], chi_f[k], H0, tol, max_iter)
        if err >= tol:
            H, err, _ = _slice_newton(r[k], B[k], D[k], chi_f[k], np.zeros_like(H0),
                                      tol, 4 * max_iter)
        if err >= tol:
            raise RateError(f"slice {k}: Newton residual {err:.2e} above {tol:.0e}")
        Hs[k] = H
        worst = max(worst, err)
    return Hs, worst


def control_cost(pi: Trajectory, Hs: np.ndarray, m: RateModel) -> float:
    """Quadrature of the three-term cost of a control on a path."""
    f = pi.frames
    J = pi.J
    w = trapezoid_weights(pi.K, pi.dt)
    dH = forward_diff(Hs) * J
    dens = (0.5 * np.mean(harmonic_faces(f) * dH * dH, axis=1)
            + np.mean(m.B(f) * f_cost(Hs) + m.D(f) * f_cost(-Hs), axis=1))
    return float(w @ dens)


def rate_explicit_smooth(pi: Trajectory, m: RateModel, tol: float = 1e-9) -> RateReport:
    """Rate of a smooth interior path through its generating control."""
    Hs, err = invert_control(pi, m, tol)
    value = control_cost(pi, Hs, m)
    return RateReport(value, "explicit", Hs, 0, err, True, energy_direct(pi),
                      {"H_sup": float(np.max(np.abs(Hs)))})


# ---------------------------------------------------------- homogeneous
def homogeneous_control(r: np.ndarray, rdot: np.ndarray, m: RateModel) -> np.ndarray:
    B, D = m.B(r), m.D(r)
    return np.log((rdot + np.sqrt(rdot * rdot + 4 * B * D)) / (2 * B))


def rate_homogeneous(times: np.ndarray, r: np.ndarray, m: RateModel) -> float:
    """Rate of a spatially constant path via the pointwise optimal control."""
    times = np.asarray(times, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= 1):
        raise RateError("homogeneous path must stay inside (0, 1)")
    if times.size < 2:
        return 0.0
    dt = np.diff(times)
    if np.max(np.abs(dt - dt.mean())) > 1e-9 * dt.mean():
        raise GridError("homogeneous path needs a uniform time grid")
    rdot = time_derivative(r, dt.mean())
    g = homogeneous_control(r, rdot, m)
    dens = rdot * g - m.B(r) * np.expm1(g) - m.D(r) * np.expm1(-g)
    return float(trapezoid_weights(r.size - 1, dt.mean()) @ dens)


def held_constant_rate(r: float, m: RateModel, horizon: float = 1.0) -> float:
    """Closed form for a path held at a constant density."""
    B, D = float(m.B(r)), float(m.D(r))
    return horizon * (np.sqrt(B) - np.sqrt(D)) ** 2


# ---------------------------------------------------------- energy bound
def chi_a(rho, a: float):
    return (rho + a) * (1.0 - rho + a)


def h_a(rho, a: float):
    """Convex entropy-like function with ``h_a'' = 1 / (2 chi_a)``."""
    rho = np.asarray(rho, dtype=float)
    return 0.5 * ((rho + a) * np.log(rho + a) + (1 - rho + a) * np.log(1 - rho + a)) / (1 + 2 * a)


def energy_bound_check(pi: Trajectory, gamma, m: RateModel, a: float = 0.01,
                       rate: float | None = None, K_s: int = 8, K_t: int = 16) -> dict:
    """Weighted energy against the rate: ``lhs / (rate + 1)``."""
    if a <= 0:
        raise ValueError("a must be > 0")
    _check_path(pi)
    w = trapezoid_weights(pi.K, pi.dt)
    grad = centered_gradient(pi.frames)
    lhs = float(w @ np.mean(grad ** 2 / chi_a(pi.frames, a), axis=1))
    if rate is None:
        rate = rate_variational(pi, gamma, m, K_s, K_t).value
    return {"lhs": lhs, "rate": float(rate), "ratio": lhs / (rate + 1.0)}
