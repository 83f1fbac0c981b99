"""Continuous-time simulation of the exchange-plus-flip particle system.

Exchanges across each discordant bond happen at rate ``N**2 / 2`` and the
site ``x`` flips at rate ``c(window around x)``.  Time is macroscopic.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .fields import Trajectory, as_field
from .rates import RateModel

log = logging.getLogger(__name__)

ENGINES = ("thinned", "tree")


class SimulationError(RuntimeError):
    """Raised for inconsistent simulation inputs or failed oracles."""


@dataclass
class Configuration:
    """Occupation numbers on the discrete torus of ``N`` sites."""

    occupancy: np.ndarray

    def __post_init__(self) -> None:
        occ = np.asarray(self.occupancy)
        if occ.ndim != 1 or not np.all((occ == 0) | (occ == 1)):
            raise SimulationError("occupancy must be a 0/1 vector")
        self.occupancy = occ.astype(np.int64)

    @property
    def N(self) -> int:
        return self.occupancy.size

    @property
    def particle_count(self) -> int:
        return int(self.occupancy.sum())

    def __getitem__(self, x: int) -> int:
        return int(self.occupancy[x % self.N])

    def copy(self) -> "Configuration":
        return Configuration(self.occupancy.copy())

    @classmethod
    def from_code(cls, code: int, N: int) -> "Configuration":
        return cls((code >> np.arange(N)) & 1)

    @property
    def code(self) -> int:
        return int(np.sum(self.occupancy << np.arange(self.N)))


@dataclass
class SimParams:
    N: int
    horizon: float
    seed: int = 0
    record_times: np.ndarray | None = None
    block: int = 1
    replica: int = 0
    engine: str = "thinned"
    kawasaki: bool = True
    glauber: bool = True

    def __post_init__(self) -> None:
        if self.N < 2:
            raise SimulationError("N must be >= 2")
        if self.horizon < 0:
            raise SimulationError("horizon must be >= 0")
        if self.engine not in ENGINES:
            raise SimulationError(f"engine must be one of {ENGINES}")
        rt = (np.array([self.horizon]) if self.record_times is None
              else np.asarray(self.record_times, dtype=float))
        if rt.ndim != 1 or rt.size == 0:
            raise SimulationError("record_times must be a non-empty list")
        if np.any(np.diff(rt) <= 0) or rt[0] < 0 or rt[-1] > self.horizon * (1 + 1e-12):
            raise SimulationError("record_times must be sorted and lie in [0, horizon]")
        self.record_times = np.minimum(rt, self.horizon)
        self.block = min(int(self.block), self.N)
        if self.block < 1 or self.N % self.block:
            raise SimulationError(f"block width {self.block} must divide N={self.N}")

    @property
    def cells(self) -> int:
        return self.N // self.block

    def check_model(self, m: RateModel) -> None:
        if m.cylinder is None:
            raise SimulationError(
                f"model {m.name!r} has no positive microscopic flip rate")
        if self.N < 2 * m.cylinder.window_size:
            raise SimulationError(
                f"N={self.N} too small for a window of {m.cylinder.window_size} sites")


def make_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent stream for ``(seed, replica)``."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(replica),))))


def sample_profile_configuration(gamma, N: int,
                                 rng: np.random.Generator) -> Configuration:
    """Independent Bernoulli occupations with parameter ``gamma(x/N)``.

    ``gamma`` is either a callable on ``[0,1)`` or a cell-average field, read
    as piecewise constant.
    """
    u = np.arange(N) / N
    if callable(gamma):
        p = np.asarray(gamma(u), dtype=float) * np.ones(N)
    else:
        g = as_field(gamma)
        p = g[(np.arange(N) * g.size) // N]
    if np.any(p < 0) or np.any(p > 1):
        raise SimulationError("profile values must lie in [0,1]")
    return Configuration((rng.random(N) < p).astype(np.int64))


def event_rates(eta: Configuration, m: RateModel, N: int | None = None,
                kawasaki: bool = True, glauber: bool = True
                ) -> tuple[np.ndarray, np.ndarray]:
    """Bond exchange rates and site flip rates of the current configuration."""
    occ = eta.occupancy
    N = eta.N if N is None else N
    M = m.cylinder.half_width
    bonds = np.where(occ != np.roll(occ, -1), N * N / 2.0, 0.0) if kawasaki \
        else np.zeros(N)
    if not glauber:
        return bonds, np.zeros(N)
    codes = np.zeros(N, dtype=np.int64)
    for i in range(-M, M + 1):
        codes = (codes << 1) | np.roll(occ, -i)
    return bonds, m.cylinder.table[codes].astype(float)


def kmc_step(eta: Configuration, m: RateModel, N: int | None,
             rng: np.random.Generator, kawasaki: bool = True,
             glauber: bool = True) -> tuple[Configuration, float]:
    """One event of the chain by direct enumeration of all rates."""
    bonds, flips = event_rates(eta, m, N, kawasaki, glauber)
    rates = np.concatenate([bonds, flips])
    total = rates.sum()
    if total <= 0:
        return eta.copy(), np.inf
    wait = rng.exponential(1.0 / total)
    idx = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    idx = min(idx, rates.size - 1)
    while rates[idx] == 0.0:
        idx -= 1
    new = eta.copy()
    n = eta.N
    if idx < n:
        x, y = idx, (idx + 1) % n
        new.occupancy[x], new.occupancy[y] = eta.occupancy[y], eta.occupancy[x]
    else:
        new.occupancy[idx - n] ^= 1
    return new, float(wait)


def _cell_map(N: int, J: int) -> tuple[np.ndarray, np.ndarray]:
    cell = (np.arange(N, dtype=np.int64) * J) // N
    return cell, np.bincount(cell, minlength=J).astype(float)


def _run(occ: np.ndarray, m: RateModel, p: SimParams, t_end: float,
         record_times: np.ndarray, rng: np.random.Generator,
         hist: np.ndarray | None = None):
    cell, counts = _cell_map(p.N, p.cells)
    kernel = _kernels.run_thinned if p.engine == "thinned" else _kernels.run_tree
    bond_rate = p.N * p.N / 2.0 if p.kawasaki else 0.0
    track = hist is not None
    h = hist if track else np.zeros(1)
    return kernel(occ, m.cylinder.table, m.cylinder.half_width, bond_rate,
                  p.glauber, float(t_end), np.asarray(record_times, dtype=float),
                  cell, counts, rng, h, track)


def simulate_trajectory(eta0: Configuration, m: RateModel, p: SimParams,
                        rng: np.random.Generator | None = None) -> Trajectory:
    """Run the chain to the horizon, recording block averages."""
    p.check_model(m)
    if eta0.N != p.N:
        raise SimulationError(f"configuration has {eta0.N} sites, params say {p.N}")
    rng = make_rng(p.seed, p.replica) if rng is None else rng
    occ = eta0.occupancy.copy()
    frames, events, flips, err = _run(occ, m, p, p.horizon, p.record_times, rng)
    if err > 1e-9:
        raise SimulationError(f"rate bookkeeping drifted (relative error {err:.2e})")
    meta = {"N": p.N, "seed": p.seed, "replica": p.replica, "engine": p.engine,
            "events": int(events), "flips": int(flips), "model_hash": m.model_hash,
            "bookkeeping_error": float(err), "final_count": int(occ.sum())}
    return Trajectory(p.record_times, frames, meta)


def stationary_samples(m: RateModel, p: SimParams, burn_in: float, count: int,
                       thin: float, rng: np.random.Generator | None = None,
                       eta0: Configuration | None = None) -> list[np.ndarray]:
    """Block-averaged snapshots after ``burn_in``, spaced by ``thin``.

    Starts from product Bernoulli(1/2) unless ``eta0`` is given.
    """
    if burn_in <= 0 or thin <= 0 or count < 1:
        raise SimulationError("burn_in and thin must be > 0, count >= 1")
    p.check_model(m)
    rng = make_rng(p.seed, p.replica) if rng is None else rng
    if eta0 is None:
        eta0 = sample_profile_configuration(lambda u: 0.5 + 0 * u, p.N, rng)
    times = burn_in + thin * np.arange(count)
    occ = eta0.occupancy.copy()
    frames, *_ = _run(occ, m, p, float(times[-1]), times, rng)
    return list(frames)


def occupation_histogram(m: RateModel, N: int, horizon: float, seed: int = 0,
                         engine: str = "thinned",
                         eta0: Configuration | None = None) -> np.ndarray:
    """Fraction of time spent in each configuration (code: bit x = site x)."""
    if N > 20:
        raise SimulationError("occupation histograms are limited to N <= 20")
    p = SimParams(N=N, horizon=horizon, seed=seed, engine=engine, block=N)
    p.check_model(m)
    rng = make_rng(seed)
    if eta0 is None:
        eta0 = sample_profile_configuration(lambda u: 0.5 + 0 * u, N, rng)
    hist = np.zeros(1 << N)
    _run(eta0.occupancy.copy(), m, p, horizon, np.array([horizon]), rng, hist)
    return hist / hist.sum()


def generator_matrix(m: RateModel, N: int) -> sp.csr_matrix:
    """Sparse generator on all ``2**N`` configurations."""
    if m.cylinder is None:
        raise SimulationError(f"model {m.name!r} has no microscopic flip rate")
    S = 1 << N
    states = np.arange(S, dtype=np.int64)
    bits = (states[:, None] >> np.arange(N)) & 1
    rows, cols, vals = [], [], []
    a = N * N / 2.0
    for x in range(N):
        y = (x + 1) % N
        disc = bits[:, x] != bits[:, y]
        s = states[disc]
        rows.append(s)
        cols.append(s ^ ((1 << x) | (1 << y)))
        vals.append(np.full(s.size, a))
    M = m.cylinder.half_width
    for x in range(N):
        code = np.zeros(S, dtype=np.int64)
        for i in range(-M, M + 1):
            code = (code << 1) | bits[:, (x + i) % N]
        rows.append(states)
        cols.append(states ^ (1 << x))
        vals.append(m.cylinder.table[code])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    Q = sp.coo_matrix((v, (r, c)), shape=(S, S)).tocsr()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def exact_stationary_small(m: RateModel, N: int) -> np.ndarray:
    """Invariant probability vector of the chain on ``N <= 12`` sites."""
    if N > 12:
        raise SimulationError("exact oracle is limited to N <= 12")
    Q = generator_matrix(m, N)
    S = Q.shape[0]
    A = Q.T.tolil()
    A[S - 1, :] = np.ones(S)
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    mu = spla.spsolve(A.tocsc(), rhs)
    resid = float(np.max(np.abs(Q.T @ mu)))
    if mu.min() < -1e-12 or resid > 1e-10:
        raise SimulationError(
            f"generator is reducible or ill-conditioned (residual {resid:.2e})")
    return np.clip(mu, 0.0, None) / np.clip(mu, 0.0, None).sum()
