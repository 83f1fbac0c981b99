"""Experiment drivers.

Each driver turns a validated config into a list of :class:`ResultRecord`.
Independent work units (replicas, paths) run through a bounded process pool
whose size comes from ``GKLAB_WORKERS``; results are merged in task order so
the output does not depend on scheduling.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.optimize import minimize

from .config import ExperimentConfig, worker_count
from .fields import Trajectory, block_average, cell_centers, l1_distance, profile
from .functionals import (energy_bound_check, held_constant_rate, rate_explicit_smooth,
                          rate_homogeneous, rate_variational)
from .particles import (Configuration, SimParams, make_rng, sample_profile_configuration,
                        simulate_trajectory, stationary_samples)
from .pde import (PdeParams, control_values, distance_to_stationary_set, solve_cauchy,
                  solve_controlled, stationary_set_search)
from .records import ResultRecord
from .smoothing import idensity_harness, mollified_step

log = logging.getLogger(__name__)

# Prescribed controls for the controlled-path family, all with sup-norm <= 1.
CONTROLS = (
    ("wave", lambda t, u: 0.8 * np.sin(2 * np.pi * u + 1.0) * np.cos(2 * t)
     + 0.2 * np.cos(4 * np.pi * u)),
    ("sine", lambda t, u: 0.5 * np.sin(2 * np.pi * u) + 0 * t),
    ("ramp", lambda t, u: 0.6 * t * np.cos(2 * np.pi * u)),
    ("drift", lambda t, u: 0.3 + 0.4 * np.sin(4 * np.pi * u - t)),
    ("decay", lambda t, u: -0.5 * np.exp(-t) * np.cos(2 * np.pi * u)
     + 0.3 * np.sin(2 * np.pi * u)),
)
STEP_WIDTHS = (0.05, 0.08, 0.12)


def control_path_gamma(J: int) -> np.ndarray:
    return 0.5 + 0.2 * np.sin(2 * np.pi * cell_centers(J))


def controlled_family(m, J: int, frames: int, horizon: float = 1.0,
                      names: tuple[str, ...] | None = None) -> list[tuple[str, Trajectory, object]]:
    """``(name, path, H)`` for each prescribed control, started at ``0.5 + 0.2 sin``."""
    gamma = control_path_gamma(J)
    out = []
    for name, H in CONTROLS:
        if names is not None and name not in names:
            continue
        path = solve_controlled(gamma, m, H, horizon, PdeParams(J=J, frames=frames))
        out.append((name, path, H))
    return out


def step_family(J: int, frames: int, horizon: float = 1.0) -> list[tuple[str, Trajectory]]:
    """Held mollified steps between 0.3 and 0.7."""
    u = cell_centers(J)
    return [(f"step-{w:g}", Trajectory.held(mollified_step(u, 0.3, 0.7, w), horizon, frames))
            for w in STEP_WIDTHS]


def deterministic_configuration(gamma, N: int) -> Configuration:
    """Low-discrepancy occupation pattern whose running count tracks ``N gamma``."""
    g = np.asarray(gamma(np.arange(N) / N), dtype=float) * np.ones(N)
    cum = np.floor(np.cumsum(g) + 1e-9)
    occ = np.diff(np.concatenate([[0.0], cum])).astype(np.int64)
    return Configuration(np.clip(occ, 0, 1))


def optimal_homogeneous_path(start: float, end: float, m, horizon: float,
                             steps: int = 200) -> tuple[np.ndarray, np.ndarray, float]:
    """Cheapest spatially constant path between two densities (piecewise linear)."""
    t = np.linspace(0.0, horizon, steps + 1)

    def cost(x):
        return rate_homogeneous(t, np.concatenate([[start], x, [end]]), m)

    x0 = np.linspace(start, end, steps + 1)[1:-1]
    res = minimize(cost, x0, method="L-BFGS-B", bounds=[(1e-3, 1 - 1e-3)] * (steps - 1))
    r = np.concatenate([[start], res.x, [end]])
    return t, r, float(res.fun)


def _pool_map(fn, tasks: list) -> list:
    workers = min(worker_count(), max(1, len(tasks)))
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def _guarded(fn):
    """Run a work unit, turning exceptions into failure payloads."""
    def wrapper(task):
        t0 = time.perf_counter()
        try:
            return {"ok": True, "value": fn(task), "wall": time.perf_counter() - t0}
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            return {"ok": False, "error": f"{type(exc).__name__}: {exc}",
                    "wall": time.perf_counter() - t0}
    return wrapper


class _Task:
    """Picklable work unit: the function name is looked up in this module."""

    def __init__(self, fn: str):
        self.fn = fn

    def __call__(self, task):
        return _guarded(globals()[self.fn])(task)


def _failure(cfg, name: str, task: dict, res: dict) -> ResultRecord:
    return ResultRecord("failure", name, cfg.hash, {"task": task, "error": res["error"]},
                        seed=cfg.seed, wall=res["wall"])


# ------------------------------------------------------------------ hydro
def _hydro_unit(task: dict) -> dict:
    cfg = ExperimentConfig(task["cfg"])
    m, N, rep = cfg.model_obj, task["N"], task["replica"]
    rng = make_rng(cfg.seed, rep)
    eta0 = sample_profile_configuration(cfg.gamma_fn, N, rng)
    p = SimParams(N=N, horizon=cfg.T, seed=cfg.seed, replica=rep, block=N // cfg.blocks,
                  engine=cfg.engine)
    sim = simulate_trajectory(eta0, m, p, rng)
    return {"sim": sim.final.tolist(), "events": sim.meta["events"]}


def run_hydro(cfg: ExperimentConfig) -> list[ResultRecord]:
    m = cfg.model_obj
    t0 = time.perf_counter()
    pde = solve_cauchy(profile(cfg.gamma_fn, cfg.J), m, cfg.T,
                       PdeParams(J=cfg.J, dt=cfg.dt, frames=cfg.frames))
    target = block_average(pde.final, cfg.blocks)
    recs = [ResultRecord("pde", "hydro", cfg.hash, {"J": cfg.J, "blocks": target},
                         wall=time.perf_counter() - t0, fields={"pde": pde})]
    tasks = [{"cfg": cfg.data, "N": N, "replica": r} for N in cfg.N for r in range(cfg.replicas)]
    results = _pool_map(_Task("_hydro_unit"), tasks)
    errors: dict[int, list[float]] = {N: [] for N in cfg.N}
    for task, res in zip(tasks, results):
        info = {"N": task["N"], "replica": task["replica"]}
        if not res["ok"]:
            recs.append(_failure(cfg, "hydro", info, res))
            continue
        err = l1_distance(res["value"]["sim"], target)
        errors[task["N"]].append(err)
        recs.append(ResultRecord("replica", "hydro", cfg.hash,
                                 dict(info, l1=err, blocks=res["value"]["sim"],
                                      initial_law="product-bernoulli",
                                      events=res["value"]["events"]),
                                 seed=cfg.seed, wall=res["wall"]))
    Ns = [N for N in cfg.N if errors[N]]
    med = [float(np.median(errors[N])) for N in Ns]
    recs.append(ResultRecord(
        "summary", "hydro", cfg.hash,
        {"N": Ns, "median_l1": med, "replicas": [len(errors[N]) for N in Ns],
         "strictly_decreasing": bool(all(a > b for a, b in zip(med, med[1:])))},
        seed=cfg.seed, plots={"error_vs_N.dat": (Ns, med)}))
    return recs


# ------------------------------------------------------------ hydrostatic
def _hydrostatic_unit(task: dict) -> dict:
    cfg = ExperimentConfig(task["cfg"])
    N = task["N"]
    p = SimParams(N=N, horizon=cfg.burn_in + cfg.thin * cfg.snapshots, seed=cfg.seed,
                  replica=task["replica"], engine=cfg.engine)
    snaps = stationary_samples(cfg.model_obj, p, cfg.burn_in, cfg.snapshots, cfg.thin)
    return {"snapshots": [s.tolist() for s in snaps]}


def run_hydrostatic(cfg: ExperimentConfig) -> list[ResultRecord]:
    m = cfg.model_obj
    t0 = time.perf_counter()
    rng = make_rng(cfg.seed, 10_000)
    seeds = [np.clip(0.5 + 0.4 * rng.uniform(-1, 1) * np.sin(
        2 * np.pi * (k + 1) * cell_centers(cfg.J) + rng.uniform(0, 2 * np.pi))
        + 0.1 * rng.uniform(-1, 1), 0.02, 0.98) for k in range(cfg.stationary_seeds)]
    E = stationary_set_search(m, PdeParams(J=cfg.J, dt=cfg.dt), seeds)
    consts = E.constants()
    recs = [ResultRecord("stationary-set", "hydrostatic", cfg.hash,
                         {"count": len(E), "constants": consts, "residuals": E.residuals,
                          "origins": E.origins, "failures": E.failures},
                         wall=time.perf_counter() - t0,
                         fields={"profiles": np.array(E.profiles)})]
    tasks = [{"cfg": cfg.data, "N": N, "replica": r} for N in cfg.N for r in range(cfg.replicas)]
    results = _pool_map(_Task("_hydrostatic_unit"), tasks)
    for task, res in zip(tasks, results):
        info = {"N": task["N"], "replica": task["replica"]}
        if not res["ok"]:
            recs.append(_failure(cfg, "hydrostatic", info, res))
            continue
        snaps = res["value"]["snapshots"]
        d = np.array([distance_to_stationary_set(s, E, cfg.distance_K) for s in snaps])
        hist, edges = np.histogram(d, bins=20, range=(0.0, max(0.2, float(d.max()))))
        recs.append(ResultRecord(
            "replica", "hydrostatic", cfg.hash,
            dict(info, median=float(np.median(d)), distances=d,
                 mean_density=[float(np.mean(s)) for s in snaps]),
            seed=cfg.seed, wall=res["wall"],
            plots={f"distance_hist_N{task['N']}_r{task['replica']}.dat":
                   (0.5 * (edges[1:] + edges[:-1]), hist)}))
    return recs


# ------------------------------------------------------- rate consistency
def _rate_unit(task: dict) -> dict:
    cfg = ExperimentConfig(task["cfg"])
    m = cfg.model_obj
    if task["kind"] == "held":
        r = task["level"]
        path = Trajectory.held(np.full(cfg.J, r), cfg.T, cfg.frames)
        var = rate_variational(path, None, m, cfg.K_s, cfg.K_t)
        exp = rate_explicit_smooth(path, m)
        return {"variational": var.value, "explicit": exp.value,
                "homogeneous": rate_homogeneous(path.times, path.frames[:, 0], m),
                "closed_form": held_constant_rate(r, m, cfg.T)}
    (name, path, H), = controlled_family(m, cfg.J, cfg.frames, cfg.T, names=(task["name"],))
    exp = rate_explicit_smooth(path, m)
    var = rate_variational(path, path.frames[0], m, cfg.K_s, cfg.K_t)
    H_true = control_values(H, path.times, cfg.J)
    return {"variational": var.value, "explicit": exp.value,
            "relative_gap": abs(var.value - exp.value) / exp.value,
            "round_trip": float(np.max(np.abs(exp.maximizer - H_true))),
            "H_sup": float(np.max(np.abs(H_true))), "converged": var.converged}


def run_rate_consistency(cfg: ExperimentConfig) -> list[ResultRecord]:
    tasks = ([{"cfg": cfg.data, "kind": "controlled", "name": n} for n, _ in CONTROLS]
             + [{"cfg": cfg.data, "kind": "held", "level": float(r)} for r in cfg.held_levels])
    results = _pool_map(_Task("_rate_unit"), tasks)
    recs = []
    for task, res in zip(tasks, results):
        info = {k: v for k, v in task.items() if k != "cfg"}
        if not res["ok"]:
            recs.append(_failure(cfg, "rate-consistency", info, res))
            continue
        recs.append(ResultRecord(task["kind"], "rate-consistency", cfg.hash,
                                 dict(info, **res["value"]), seed=cfg.seed, wall=res["wall"]))
    return recs


# --------------------------------------------------------------- ldp scan
def _ldp_unit(task: dict) -> dict:
    cfg = ExperimentConfig(task["cfg"])
    m, N = cfg.model_obj, task["N"]
    eta0 = deterministic_configuration(cfg.gamma_fn, N)
    # With a constant flip rate the total mass is a birth-death chain that
    # exchanges never touch, so they can be switched off without changing its law.
    constant = bool(np.ptp(m.cylinder.table) == 0)
    rec_t = np.linspace(0.0, cfg.T, 26)
    level = int(np.ceil(cfg.threshold * N - 1e-9))
    hits, paths = 0, np.zeros(rec_t.size)
    for i in range(cfg.samples):
        p = SimParams(N=N, horizon=cfg.T, seed=cfg.seed, replica=i, block=N,
                      record_times=rec_t, engine=cfg.engine, kawasaki=not constant)
        mass = simulate_trajectory(eta0, m, p).frames[:, 0]
        if mass[-1] * N >= level - 1e-9:
            hits += 1
            paths += mass
    return {"hits": hits, "samples": cfg.samples, "start": eta0.particle_count / N,
            "exchanges_off": constant,
            "conditioned_path": (paths / hits).tolist() if hits else None,
            "times": rec_t.tolist()}


def run_ldp_scan(cfg: ExperimentConfig) -> list[ResultRecord]:
    m = cfg.model_obj
    tasks = [{"cfg": cfg.data, "N": N} for N in cfg.N]
    results = _pool_map(_Task("_ldp_unit"), tasks)
    start = float(np.mean(profile(cfg.gamma_fn, cfg.J)))
    _, _, optimal = optimal_homogeneous_path(start, cfg.threshold, m, cfg.T)
    recs, Ns, est = [], [], []
    for task, res in zip(tasks, results):
        N = task["N"]
        if not res["ok"]:
            recs.append(_failure(cfg, "ldp-scan", {"N": N}, res))
            continue
        v = res["value"]
        p_hat = v["hits"] / v["samples"]
        payload = {"N": N, "hits": v["hits"], "samples": v["samples"], "p_hat": p_hat,
                   "threshold": cfg.threshold, "start": v["start"],
                   "exchanges_off": v["exchanges_off"], "optimal_rate": optimal}
        if v["hits"]:
            e = -np.log(p_hat) / N
            cp = np.array(v["conditioned_path"])
            payload.update(estimate=e, ratio=e / optimal,
                           conditioned_path=cp,
                           conditioned_rate=rate_homogeneous(np.array(v["times"]), cp, m))
            Ns.append(N)
            est.append(e)
        recs.append(ResultRecord("scan", "ldp-scan", cfg.hash, payload, seed=cfg.seed,
                                 wall=res["wall"]))
    change = [abs(b - a) / a for a, b in zip(est, est[1:])]
    recs.append(ResultRecord(
        "summary", "ldp-scan", cfg.hash,
        {"N": Ns, "estimate": est, "optimal_rate": optimal,
         "ratio": [e / optimal for e in est], "relative_change": change},
        seed=cfg.seed, plots={"rate_vs_N.dat": (Ns, est)}))
    return recs


# --------------------------------------------------------------- idensity
def benchmark_paths(m, J: int, frames: int, horizon: float = 1.0,
                    held_level: float = 0.25) -> list[tuple[str, Trajectory]]:
    (_, ctrl, _), = controlled_family(m, J, frames, horizon, names=("wave",))
    step = step_family(J, frames, horizon)[1][1]
    held = Trajectory.held(np.full(J, held_level), horizon, frames)
    return [("controlled", ctrl), ("step", step), ("held", held)]


def _idensity_unit(task: dict) -> dict:
    cfg = ExperimentConfig(task["cfg"])
    m = cfg.model_obj
    name, path = benchmark_paths(m, cfg.J, cfg.frames, cfg.T)[task["index"]]
    base, levels = idensity_harness(path, path.frames[0], m, cfg.levels,
                                    lambda p: rate_explicit_smooth(p, m).value,
                                    cfg.distance_K)
    return {"path": name, "base": base,
            "levels": [{"delta": L.delta, "eps": L.eps, "n": L.n, "rate": L.rate,
                        "gap": L.gap, "relative_gap": L.gap / base if base else None,
                        "distance": L.distance} for L in levels]}


def run_idensity(cfg: ExperimentConfig) -> list[ResultRecord]:
    tasks = [{"cfg": cfg.data, "index": i} for i in range(3)]
    results = _pool_map(_Task("_idensity_unit"), tasks)
    recs = []
    for task, res in zip(tasks, results):
        if not res["ok"]:
            recs.append(_failure(cfg, "idensity", {"index": task["index"]}, res))
            continue
        v = res["value"]
        ns = [L["n"] for L in v["levels"]]
        recs.append(ResultRecord(
            "harness", "idensity", cfg.hash, v, seed=cfg.seed, wall=res["wall"],
            plots={f"idensity_{v['path']}.dat": (ns, [L["gap"] for L in v["levels"]])}))
    return recs


# ------------------------------------------------------------ energy bound
def energy_bound_table(m, J: int, frames: int, a: float = 0.01,
                       horizon: float = 1.0) -> list[dict]:
    """Weighted-energy ratio on the controlled family and the held steps."""
    rows = []
    for name, path, _ in controlled_family(m, J, frames, horizon):
        rate = rate_explicit_smooth(path, m).value
        rows.append(dict(path=name, **energy_bound_check(path, path.frames[0], m, a, rate)))
    for name, path in step_family(J, frames, horizon):
        rate = rate_explicit_smooth(path, m).value
        rows.append(dict(path=name, **energy_bound_check(path, path.frames[0], m, a, rate)))
    return rows


RUNNERS = {
    "hydro": run_hydro,
    "hydrostatic": run_hydrostatic,
    "rate-consistency": run_rate_consistency,
    "ldp-scan": run_ldp_scan,
    "idensity": run_idensity,
}


def run_experiment(cfg: ExperimentConfig, name: str | None = None) -> list[ResultRecord]:
    name = name or cfg.experiment
    if name not in RUNNERS:
        raise ValueError(f"unknown experiment {name!r}")
    log.info("running %s (config %s)", name, cfg.hash)
    return RUNNERS[name](cfg)
