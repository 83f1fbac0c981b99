"""Mollifiers and path regularizations with controlled rate changes.

The four constructions, applied in order, turn a finite-rate path into a
smooth interior one:

1. ``splice_with_solution``: run the hydrodynamic flow for a short time,
   run it backwards, then follow the path shifted by ``2 delta``.
2. ``interpolate_with_solution``: mix with the hydrodynamic solution.
3. ``heat_kernel_smooth``: convolve in space with a Brownian kernel whose
   time grows from 0 to ``1/n`` along a smooth ramp.
4. ``time_average_smooth``: average forward in time over a window that
   grows from 0 to ``1/n`` along the same ramp.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fields import GridError, Trajectory, as_field, path_distance
from .pde import PdeParams, solve_cauchy, solve_homogeneous_ode
from .rates import RateModel

log = logging.getLogger(__name__)

BUMP_NODES = 4097


def bump(r: np.ndarray) -> np.ndarray:
    """Unnormalized ``exp(-1/(1-r^2))`` on ``(-1, 1)``, zero elsewhere."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _bump_mass() -> float:
    r = np.linspace(-1.0, 1.0, BUMP_NODES)
    y = bump(r)
    h = r[1] - r[0]
    # composite Simpson on the tabulated nodes
    return float(h / 3.0 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum()))


BUMP_Z = _bump_mass()


def phi(r) -> np.ndarray:
    """Unit-mass bump supported on ``[-1, 1]``."""
    return bump(r) / BUMP_Z


def phi_unit(s) -> np.ndarray:
    """Unit-mass bump supported on ``[0, 1]``."""
    return 2.0 * phi(2.0 * np.asarray(s, dtype=float) - 1.0)


def _stencil(width: float, step: float, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (in grid steps) and normalized weights of a sampled bump."""
    reach = width / step
    if reach < 3:
        raise GridError(f"{what} kernel width {width:g} spans fewer than 3 grid steps")
    n = int(np.ceil(reach))
    offs = np.arange(-n, n + 1)
    w = phi(offs / reach)
    return offs, w / w.sum()


@dataclass(frozen=True)
class MollifierSpec:
    eps: float
    delta: float
    Z: float = BUMP_Z

    def __post_init__(self) -> None:
        if not (0 < self.eps < 0.5 and 0 < self.delta < 0.5):
            raise ValueError("eps and delta must lie in (0, 1/2)")


def space_multiplier(eps: float, J: int) -> np.ndarray:
    """Discrete Fourier multiplier of the sampled space kernel."""
    offs, w = _stencil(eps, 1.0 / J, "space")
    k = np.arange(J // 2 + 1)
    return (w[None, :] * np.cos(2 * np.pi * np.outer(k, offs) / J)).sum(axis=1)


def mollify_spacetime(pi: Trajectory, spec: MollifierSpec) -> Trajectory:
    """Convolve with the bump in space and time, holding the end frames fixed outside."""
    pi.require_uniform()
    J, K = pi.J, pi.K
    soffs, sw = _stencil(spec.eps, 1.0 / J, "space")
    toffs, tw = _stencil(spec.delta, pi.dt, "time")
    f = pi.frames
    space = np.zeros_like(f)
    for o, w in zip(soffs, sw):
        space += w * np.roll(f, -o, axis=1)
    out = np.zeros_like(f)
    idx = np.arange(K + 1)
    for o, w in zip(toffs, tw):
        out += w * space[np.clip(idx + o, 0, K)]
    return pi.copy(out, stage="mollify", eps=spec.eps, delta=spec.delta)


def mollified_step(u, low: float, high: float, width: float) -> np.ndarray:
    """Indicator of ``[1/4, 3/4]`` (scaled to ``[low, high]``) convolved with the bump."""
    if not 0 < width < 0.25:
        raise ValueError("width must lie in (0, 1/4)")
    r = np.linspace(-1.0, 1.0, BUMP_NODES)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (phi(r[1:]) + phi(r[:-1])) * np.diff(r))])
    cdf /= cdf[-1]
    u = np.mod(np.asarray(u, dtype=float), 1.0)
    up = np.interp((u - 0.25) / width, r, cdf, left=0.0, right=1.0)
    down = np.interp((u - 0.75) / width, r, cdf, left=0.0, right=1.0)
    return low + (high - low) * (up - down)


# ------------------------------------------------------------- schedule
def smooth_ramp(x) -> np.ndarray:
    """C-infinity step from 0 (x <= 0) to 1 (x >= 1)."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class SmoothingSchedule:
    delta: float
    n: float
    quad: int = 257

    def __post_init__(self) -> None:
        if self.delta <= 0 or self.n <= 0:
            raise ValueError("delta and n must be > 0")

    def alpha(self, t) -> np.ndarray:
        return smooth_ramp((np.asarray(t, dtype=float) - self.delta) / self.delta)

    def window(self, t) -> np.ndarray:
        return self.alpha(t) / self.n

    def phi_time(self, s) -> np.ndarray:
        return phi_unit(s)


def _solution_on(pi: Trajectory, gamma: np.ndarray, m: RateModel, K: int) -> Trajectory:
    dt = min(1e-4, pi.dt / 4)
    return solve_cauchy(gamma, m, K * pi.dt, PdeParams(J=pi.J, dt=dt, frames=K))


# ------------------------------------------------------------ splice
def splice_with_solution(pi: Trajectory, gamma, m: RateModel, delta: float,
                         tol: float = 1e-9) -> Trajectory:
    """Forward solution on ``[0, d]``, its reversal on ``[d, 2d]``, then the shifted path."""
    pi.require_uniform()
    gamma = as_field(gamma, pi.J)
    if delta >= pi.horizon / 2:
        raise ValueError("delta must be below T/2")
    if np.mean(np.abs(pi.frames[0] - gamma)) > tol:
        raise ValueError("path must start at gamma")
    d = int(round(delta / pi.dt))
    if abs(d * pi.dt - delta) > 1e-9 * max(delta, 1) or d < 4:
        raise GridError("delta must be a multiple of the time step, at least 4 steps")
    lam = _solution_on(pi, gamma, m, d).frames
    out = np.empty_like(pi.frames)
    out[: d + 1] = lam
    out[d: 2 * d + 1] = lam[::-1]
    out[2 * d:] = pi.frames[: pi.K + 1 - 2 * d]
    return pi.copy(out, stage="splice", delta=delta)


def interpolate_with_solution(pi: Trajectory, gamma, m: RateModel, eps: float,
                              check: bool = True) -> Trajectory:
    """Frame-wise convex mix ``(1 - eps) rho + eps lambda``."""
    pi.require_uniform()
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    gamma = as_field(gamma, pi.J)
    if eps == 0:
        return pi.copy(stage="interp", eps=0.0)
    lam = _solution_on(pi, gamma, m, pi.K).frames
    out = (1.0 - eps) * pi.frames + eps * lam
    if check:
        _, lo = solve_homogeneous_ode(0.0, m, pi.horizon, pi.times)
        _, hi = solve_homogeneous_ode(1.0, m, pi.horizon, pi.times)
        if (np.any(out < eps * lo[:, None] - 1e-8)
                or np.any(out > 1 - eps + eps * hi[:, None] + 1e-8)):
            raise RuntimeError("interpolant left the barrier envelope")
    return pi.copy(out, stage="interp", eps=eps)


def brownian_multiplier(J: int, s: float, terms: int = 3) -> np.ndarray:
    """Multiplier of the sampled Brownian kernel at time ``s`` (aliases folded in)."""
    k = np.arange(J // 2 + 1)
    if s <= 0:
        return np.ones(k.size)
    ls = np.arange(-terms, terms + 1)
    m = np.exp(-2.0 * np.pi ** 2 * (k[:, None] + ls[None, :] * J) ** 2 * s).sum(axis=1)
    m0 = np.exp(-2.0 * np.pi ** 2 * (ls * J) ** 2 * s).sum()
    return m / m0


def heat_kernel_smooth(pi: Trajectory, schedule: SmoothingSchedule) -> Trajectory:
    """Convolve frame ``t`` with the Brownian kernel at time ``alpha(t)/n``."""
    J = pi.J
    out = pi.frames.copy()
    s = schedule.window(pi.times)
    for k in np.flatnonzero(s > 0):
        out[k] = np.fft.irfft(np.fft.rfft(pi.frames[k]) * brownian_multiplier(J, s[k]), n=J)
    return pi.copy(out, stage="heat", n=schedule.n, delta=schedule.delta)


def time_average_smooth(pi: Trajectory, m: RateModel,
                        schedule: SmoothingSchedule) -> Trajectory:
    """Average forward in time over ``[t, t + alpha(t)/n]`` with the unit bump.

    Beyond ``T`` the path is continued by the hydrodynamic flow from its
    final frame over ``[T, T + 1]``.
    """
    pi.require_uniform()
    dt = pi.dt
    K_ext = int(np.ceil(1.0 / dt - 1e-9))
    ext = solve_cauchy(pi.final, m, K_ext * dt,
                       PdeParams(J=pi.J, dt=min(1e-4, dt / 4), frames=K_ext)).frames
    full = np.concatenate([pi.frames, ext[1:]])
    s = (np.arange(schedule.quad) + 0.5) / schedule.quad
    wts = schedule.phi_time(s)
    wts = wts / wts.sum()
    out = pi.frames.copy()
    win = schedule.window(pi.times)
    for k in np.flatnonzero(win > 0):
        x = (pi.times[k] + win[k] * s) / dt
        i = np.minimum(np.floor(x).astype(int), full.shape[0] - 2)
        frac = (x - i)[:, None]
        vals = (1 - frac) * full[i] + frac * full[i + 1]
        out[k] = wts @ vals
    return pi.copy(out, stage="timeavg", n=schedule.n, delta=schedule.delta)


# ------------------------------------------------------------ harness
@dataclass
class HarnessLevel:
    delta: float
    eps: float
    n: float
    rate: float
    gap: float
    distance: float
    path: Trajectory = field(repr=False)


def compose_pipeline(pi: Trajectory, gamma, m: RateModel, delta: float, eps: float,
                     n: float, stages: tuple[str, ...] = ("splice", "interp", "heat",
                                                          "timeavg")) -> Trajectory:
    """Apply the selected constructions in order.

    The smoothing ramp uses ``delta/3`` so that its support sits inside the
    stretch where the spliced path follows the hydrodynamic flow.
    """
    out = pi
    sched = SmoothingSchedule(delta / 3.0, n)
    for stage in stages:
        if stage == "splice":
            out = splice_with_solution(out, gamma, m, delta)
        elif stage == "interp":
            out = interpolate_with_solution(out, gamma, m, eps)
        elif stage == "heat":
            out = heat_kernel_smooth(out, sched)
        elif stage == "timeavg":
            out = time_average_smooth(out, m, sched)
        else:
            raise ValueError(f"unknown stage {stage!r}")
    return out


def idensity_harness(pi: Trajectory, gamma, m: RateModel, levels, rate_fn,
                     K: int = 16) -> tuple[float, list[HarnessLevel]]:
    """Rate and distance of the composed pipeline along a schedule.

    ``levels`` is a sequence of ``(delta, eps, n)``; ``rate_fn(path)`` returns
    a rate value. Paths whose final frame touches 0 or 1 are refused: the
    extension past the horizon starts there and has no finite explicit rate.
    """
    last = pi.frames[-1]
    if last.min() <= 0.0 or last.max() >= 1.0:
        raise ValueError("benchmark path must stay inside (0, 1) at its final frame")
    base = rate_fn(pi)
    out = []
    for delta, eps, n in levels:
        path = compose_pipeline(pi, gamma, m, delta, eps, n)
        r = rate_fn(path)
        out.append(HarnessLevel(delta, eps, n, r, abs(r - base),
                                path_distance(path, pi, K), path))
        log.info("delta=%g eps=%g n=%g rate=%.6g gap=%.3g", delta, eps, n, r, abs(r - base))
    return base, out
