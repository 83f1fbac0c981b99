"""Reaction-diffusion solvers on the periodic grid.

The evolution ``d rho = (1/2) Lap rho + F(rho)`` and its controlled variant
are advanced by Strang splitting: a half step of the explicit reaction (and
drift) with a two-stage strong-stability-preserving Runge-Kutta rule, a full
step of the exact discrete heat semigroup, and another reaction half step.
Every stage is a convex combination of monotone maps, so values stay in
[0, 1] under the step bound, and the scheme is second order in time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit
from scipy.integrate import solve_ivp

from .fields import Trajectory, as_field, cell_centers, measure_distance
from .rates import RateModel, reaction_roots

log = logging.getLogger(__name__)

SCHEMES = ("finite-difference-imex", "mild-picard")
RANGE_TOL = 1e-10


class PdeError(RuntimeError):
    """Numerical failure in a PDE solver."""


class StepBoundError(PdeError):
    """The explicit part of the scheme would lose positivity."""

    def __init__(self, dt: float, limit: float):
        super().__init__(f"time step dt={dt:g} exceeds the stability limit {limit:g}")
        self.dt = dt
        self.limit = limit


@dataclass
class PdeParams:
    J: int | None = None
    dt: float = 1e-4
    scheme: str = "finite-difference-imex"
    tol: float = 1e-10
    max_iter: int = 200
    frames: int = 100

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.tol <= 0:
            raise ValueError("dt and tol must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")


# ---------------------------------------------------------------- operators
def laplacian(v: np.ndarray) -> np.ndarray:
    """Second-difference Laplacian on the periodic grid (last axis)."""
    J = v.shape[-1]
    return (np.roll(v, -1, -1) - 2.0 * v + np.roll(v, 1, -1)) * (J * J)


def half_laplacian_symbol(J: int) -> np.ndarray:
    """Eigenvalues of ``(1/2) Lap_J`` on the real-FFT modes."""
    k = np.arange(J // 2 + 1)
    return -(1.0 - np.cos(2.0 * np.pi * k / J)) * (J * J)


def heat_multiplier(J: int, t: float) -> np.ndarray:
    return np.exp(t * half_laplacian_symbol(J))


def heat_semigroup(v: np.ndarray, t: float) -> np.ndarray:
    J = v.shape[-1]
    return np.fft.irfft(np.fft.rfft(v, axis=-1) * heat_multiplier(J, t), n=J, axis=-1)


def laplacian_matrix(J: int) -> sp.csr_matrix:
    e = np.ones(J)
    L = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
    L[0, J - 1] = 1.0
    L[J - 1, 0] = 1.0
    return (L * (J * J)).tocsr()


# ------------------------------------------------------------ compiled bits
@njit(cache=True)
def _poly(coef, x):
    acc = 0.0
    for i in range(coef.shape[0] - 1, -1, -1):
        acc = acc * x + coef[i]
    return acc


@njit(cache=True)
def _euler(rho, bt, dtc, tau, H, has_H, J2):
    J = rho.shape[0]
    out = np.empty(J)
    if not has_H:
        for j in range(J):
            r = rho[j]
            react = (1.0 - r) * _poly(bt, r) - r * _poly(dtc, r)
            out[j] = r + tau * react
        return out
    flux = np.empty(J)
    for j in range(J):
        a = rho[j] * (1.0 - rho[j])
        jp = (j + 1) % J
        b = rho[jp] * (1.0 - rho[jp])
        chi = 0.0 if a + b <= 0.0 else 2.0 * a * b / (a + b)
        flux[j] = chi * (H[jp] - H[j])
    for j in range(J):
        r = rho[j]
        drift = -(flux[j] - flux[(j - 1) % J]) * J2
        react = (1.0 - r) * _poly(bt, r) * np.exp(H[j]) - r * _poly(dtc, r) * np.exp(-H[j])
        out[j] = r + tau * (drift + react)
    return out


@njit(cache=True)
def _ssp2(rho, bt, dtc, tau, Ha, Hb, has_H, J2):
    y1 = _euler(rho, bt, dtc, tau, Ha, has_H, J2)
    y2 = _euler(y1, bt, dtc, tau, Hb, has_H, J2)
    return 0.5 * (rho + y2)


# ---------------------------------------------------------------- helpers
def _time_grid(horizon: float, p: PdeParams) -> tuple[np.ndarray, int, float]:
    """Record times, steps per frame and the adjusted step."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon == 0:
        return np.zeros(1), 0, p.dt
    K = p.frames
    spf = max(1, int(np.ceil(horizon / (K * p.dt) - 1e-9)))
    return np.linspace(0.0, horizon, K + 1), spf, horizon / (K * spf)


def control_values(H, times: np.ndarray, J: int) -> np.ndarray:
    """Evaluate a control (basis object, callable or scalar) on the grid."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if H is None:
        return np.zeros((times.size, J))
    if hasattr(H, "grid"):
        return np.asarray(H.grid(times, J), dtype=float)
    if callable(H):
        u = cell_centers(J)
        return np.asarray(H(times[:, None], u[None, :]), dtype=float) * np.ones((times.size, J))
    return np.full((times.size, J), float(H))


def _check_range(frames: np.ndarray, what: str) -> None:
    lo, hi = float(frames.min()), float(frames.max())
    if lo < -RANGE_TOL or hi > 1 + RANGE_TOL:
        raise PdeError(f"{what}: values left [0,1] (min {lo:.3e}, max {hi:.3e})")


def reaction_step_limit(m: RateModel) -> float:
    """Largest dt for which each explicit half-step stage is monotone."""
    return 2.0 / max(m.lipschitz, 1e-300)


def controlled_step_limit(m: RateModel, Hvals: np.ndarray) -> float:
    """Largest dt keeping the explicit controlled stages positive."""
    J = Hvals.shape[-1]
    dH = np.abs(np.diff(Hvals, axis=-1, append=Hvals[..., :1]))
    drift = 2.0 * (dH + np.roll(dH, 1, axis=-1)) * J * J
    react = np.maximum(m.birth_bound * np.exp(Hvals), m.death_bound * np.exp(-Hvals))
    lam = float(np.max(drift + react))
    return min(2.0 / lam, reaction_step_limit(m)) if lam > 0 else np.inf


# ---------------------------------------------------------------- solvers
def _march(gamma: np.ndarray, m: RateModel, horizon: float, p: PdeParams, H,
           check_range: bool = True) -> Trajectory:
    J = gamma.size
    times, spf, dt = _time_grid(horizon, p)
    frames = np.empty((times.size, J))
    frames[0] = gamma
    has_H = H is not None
    if has_H:
        probe = np.linspace(0.0, horizon, 4 * max(p.frames, 1) + 1)
        limit = controlled_step_limit(m, control_values(H, probe, J))
    else:
        limit = reaction_step_limit(m)
    if dt >= limit:
        raise StepBoundError(dt, limit)
    bt = np.ascontiguousarray(m.polys.birth_reduced, dtype=float)
    dc = np.ascontiguousarray(m.polys.death_reduced, dtype=float)
    mult = heat_multiplier(J, dt)
    J2 = float(J * J)
    zero = np.zeros(J)
    rho = gamma.copy()
    half = 0.5 * dt
    for k in range(times.size - 1):
        t0 = times[k]
        if has_H:
            tt = t0 + half * np.arange(2 * spf + 1)
            Hs = control_values(H, tt, J)
            if not np.all(np.isfinite(Hs)):
                raise PdeError("control field is not finite")
        for n in range(spf):
            if has_H:
                Ha, Hm, Hb = Hs[2 * n], Hs[2 * n + 1], Hs[2 * n + 2]
            else:
                Ha = Hm = Hb = zero
            rho = _ssp2(rho, bt, dc, half, Ha, Hm, has_H, J2)
            rho = np.fft.irfft(np.fft.rfft(rho) * mult, n=J)
            rho = _ssp2(rho, bt, dc, half, Hm, Hb, has_H, J2)
        frames[k + 1] = rho
    if check_range:
        _check_range(frames, "integration")
    return Trajectory(times, frames, {"scheme": "finite-difference-imex", "dt": dt})


def solve_cauchy(gamma, m: RateModel, horizon: float,
                 p: PdeParams | None = None) -> Trajectory:
    """Hydrodynamic evolution from ``gamma`` recorded on ``p.frames`` intervals."""
    p = p or PdeParams()
    gamma = as_field(gamma, p.J)
    _check_range(gamma[None], "initial profile")
    if p.scheme == "mild-picard":
        return solve_mild_picard(gamma, m, horizon, p)
    return _march(gamma, m, horizon, p, None)


def solve_controlled(gamma, m: RateModel, H, horizon: float,
                     p: PdeParams | None = None) -> Trajectory:
    """Controlled evolution; ``H=None`` reproduces :func:`solve_cauchy`."""
    p = p or PdeParams()
    gamma = as_field(gamma, p.J)
    _check_range(gamma[None], "initial profile")
    return _march(gamma, m, horizon, p, H)


def solve_mild_picard(gamma, m: RateModel, horizon: float,
                      p: PdeParams | None = None) -> Trajectory:
    """Fixed point of the Duhamel map by successive approximation.

    The time integral is discretized by the trapezoid rule on the step grid
    and the semigroup is applied exactly in Fourier space.  The horizon is
    cut into windows short enough for the map to contract; a window that
    fails to converge is halved and retried.
    """
    p = p or PdeParams()
    gamma = as_field(gamma, p.J)
    J = gamma.size
    times, spf, dt = _time_grid(horizon, p)
    frames = np.empty((times.size, J))
    frames[0] = gamma
    if horizon == 0:
        return Trajectory(times, frames, {"scheme": "mild-picard", "iterations": 0})
    n_total = (times.size - 1) * spf
    lip = max(m.lipschitz, 1e-12)
    window = max(1, int(0.5 / (lip * dt)))
    E = heat_multiplier(J, dt)
    start = gamma.copy()
    step = 0
    iters = 0
    while step < n_total:
        n = min(window, n_total - step)
        res = _picard_window(start, m, n, dt, E, p.tol, p.max_iter)
        if res is None:
            if window == 1:
                raise PdeError("Picard iteration failed on a single step")
            window = max(1, window // 2)
            log.debug("halving Picard window to %d steps", window)
            continue
        path, it = res
        iters = max(iters, it)
        for i in range(1, n + 1):
            s = step + i
            if s % spf == 0:
                frames[s // spf] = path[i]
        start = path[-1]
        step += n
    _check_range(frames, "mild solution")
    return Trajectory(times, frames, {"scheme": "mild-picard", "dt": dt,
                                      "iterations": iters})


def _picard_window(start, m, n, dt, E, tol, max_iter):
    J = start.size
    free = np.fft.rfft(start)[None, :] * E[None, :] ** np.arange(n + 1)[:, None]
    path = np.fft.irfft(free, n=J, axis=1)
    for it in range(1, max_iter + 1):
        Fh = np.fft.rfft(m.F(path), axis=1)
        I = np.zeros_like(Fh)
        for i in range(n):
            I[i + 1] = E * I[i] + 0.5 * dt * (E * Fh[i] + Fh[i + 1])
        new = np.fft.irfft(free + I, n=J, axis=1)
        diff = float(np.max(np.abs(new - path)))
        path = new
        if not np.isfinite(diff):
            return None
        if diff < tol:
            return path, it
    return None


def solve_homogeneous_ode(j: float, m: RateModel, horizon: float,
                          times: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Spatially constant evolution ``r' = F(r)`` by an 8th-order Runge-Kutta rule."""
    if not 0.0 <= j <= 1.0:
        raise ValueError("initial value must lie in [0,1]")
    t = np.linspace(0.0, horizon, 201) if times is None else np.asarray(times, float)
    if horizon == 0:
        return t, np.full(t.size, float(j))
    sol = solve_ivp(lambda _, y: m.F(y), (0.0, horizon), [float(j)], method="DOP853",
                    t_eval=t, rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise PdeError(sol.message)
    return t, sol.y[0]


# --------------------------------------------------------- stationary set
@dataclass
class StationarySet:
    profiles: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    origins: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.profiles)

    def constants(self, tol: float = 1e-8) -> list[float]:
        return [float(q.mean()) for q in self.profiles if np.ptp(q) < tol]


def elliptic_residual(rho: np.ndarray, m: RateModel) -> np.ndarray:
    return 0.5 * laplacian(rho) + m.F(rho)


def newton_polish(rho: np.ndarray, m: RateModel, tol: float = 1e-10,
                  max_iter: int = 50) -> tuple[np.ndarray, float]:
    """Newton's method on the discrete elliptic system."""
    L = 0.5 * laplacian_matrix(rho.size)
    rho = rho.copy()
    res = elliptic_residual(rho, m)
    for _ in range(max_iter):
        err = float(np.max(np.abs(res)))
        if err < tol:
            break
        A = (L + sp.diags(m.dF(rho))).tocsc()
        rho = rho - spla.spsolve(A, res)
        res = elliptic_residual(rho, m)
    return rho, float(np.max(np.abs(res)))


def relax(rho: np.ndarray, m: RateModel, tol: float = 1e-7, t_cap: float = 200.0,
          dt: float | None = None) -> tuple[np.ndarray, bool]:
    """Run the evolution in unit time blocks until it stops moving."""
    dt = dt or min(0.5 * reaction_step_limit(m), 0.01)
    p = PdeParams(J=rho.size, dt=dt, frames=1)
    t = 0.0
    while t < t_cap:
        nxt = _march(rho, m, 1.0, p, None).final
        moved = float(np.max(np.abs(nxt - rho)))
        rho = nxt
        t += 1.0
        if moved < tol:
            return rho, True
    return rho, False


def stationary_set_search(m: RateModel, p: PdeParams | None = None,
                          seeds=(), dedup_eps: float = 1e-6,
                          t_cap: float = 200.0) -> StationarySet:
    """Constant roots of F plus relaxed-and-polished limits of the seeds."""
    p = p or PdeParams()
    J = p.J or (len(seeds[0]) if len(seeds) else 64)
    tol = max(p.tol, 1e-12)
    out = StationarySet()

    def add(profile: np.ndarray, res: float, origin: str) -> None:
        for q in out.profiles:
            if np.mean(np.abs(q - profile)) < dedup_eps:
                return
        out.profiles.append(profile)
        out.residuals.append(res)
        out.origins.append(origin)

    for r in reaction_roots(m):
        prof = np.full(J, float(r))
        add(prof, float(np.max(np.abs(elliptic_residual(prof, m)))), "root")
    for i, seed in enumerate(seeds):
        seed = as_field(seed, J)
        limit, settled = relax(seed, m, t_cap=t_cap)
        if not settled:
            out.failures.append({"seed": i, "reason": "relaxation did not settle"})
            continue
        polished, res = newton_polish(limit, m, tol)
        if res >= tol or polished.min() < -RANGE_TOL or polished.max() > 1 + RANGE_TOL:
            out.failures.append({"seed": i, "reason": f"Newton residual {res:.2e}"})
            continue
        add(polished, res, f"seed {i}")
    return out


def distance_to_stationary_set(pi, E: StationarySet, K: int = 16) -> float:
    if not E.profiles:
        raise ValueError("stationary set is empty")
    """Distance to the closest profile; pairings are exact on each field's own grid."""
    values = as_field(pi)
    return min(measure_distance(values, q, K) for q in E.profiles)
