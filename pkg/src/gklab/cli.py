"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import EXPERIMENTS, ConfigError, load_config
from .fields import Trajectory, profile
from .functionals import (rate_explicit_smooth, rate_homogeneous, rate_variational)
from .particles import (SimParams, exact_stationary_small, make_rng,
                        sample_profile_configuration, simulate_trajectory)
from .pde import SCHEMES, PdeParams, solve_cauchy, stationary_set_search
from .rates import enumerate_reaction_polynomials, reaction_roots
from .records import dumps, field_csv, write_records

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
STAGES = ("splice", "interp", "heat", "timeavg")


def _emit(text: str, out: str | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)
    print(path / name)


def read_path_csv(path: str) -> Trajectory:
    """Load a trajectory written as CSV rows ``t, v_0, ..., v_{J-1}``."""
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read path file {path!r}: {exc}") from None
    return Trajectory(mat[:, 0], mat[:, 1:])


def _default_path(cfg) -> Trajectory:
    from .experiments import controlled_family
    return controlled_family(cfg.model_obj, cfg.J, cfg.frames, cfg.T, names=("wave",))[0][1]


# ------------------------------------------------------------- commands
def cmd_derive_rates(args, cfg) -> int:
    m = cfg.model_obj
    out = m.describe()
    if m.cylinder is not None:
        derived = enumerate_reaction_polynomials(m.cylinder)
        out["from_table"] = {"birth": derived.birth.tolist(), "death": derived.death.tolist()}
        out["window_rates"] = m.cylinder.to_mapping()
    out["roots"] = [float(r) for r in reaction_roots(m)]
    out["lipschitz"] = m.lipschitz
    out["model_hash"] = m.model_hash
    _emit(dumps(out) + "\n", args.out, "rates.json")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    m = cfg.model_obj
    N = args.N or cfg.N[0]
    rng = make_rng(cfg.seed, 0)
    eta0 = sample_profile_configuration(cfg.gamma_fn, N, rng)
    times = np.linspace(0.0, cfg.T, cfg.frames + 1)
    p = SimParams(N=N, horizon=cfg.T, seed=cfg.seed, record_times=times,
                  block=args.block or 1, engine=cfg.engine)
    tr = simulate_trajectory(eta0, m, p, rng)
    lines = [dumps({"type": "meta", "seed": cfg.seed, "N": N, "model_hash": m.model_hash,
                    "events": tr.meta["events"], "config_hash": cfg.hash,
                    "initial_law": "product-bernoulli"})]
    lines += [dumps({"type": "frame", "t": t, "density": f}) for t, f in zip(tr.times, tr.frames)]
    _emit("".join(s + "\n" for s in lines), args.out, "simulate.ndjson")
    return EXIT_OK


def cmd_pde(args, cfg) -> int:
    p = PdeParams(J=cfg.J, dt=cfg.dt, frames=cfg.frames, scheme=args.scheme)
    tr = solve_cauchy(profile(cfg.gamma_fn, cfg.J), cfg.model_obj, cfg.T, p)
    _emit(field_csv(tr), args.out, "pde.csv")
    return EXIT_OK


def cmd_stationary(args, cfg) -> int:
    m = cfg.model_obj
    if args.exact:
        N = args.N or 8
        mu = exact_stationary_small(m, N)
        lines = [dumps({"type": "exact", "N": N, "model_hash": m.model_hash,
                        "probabilities": mu})]
        _emit("".join(s + "\n" for s in lines), args.out, "exact.ndjson")
        return EXIT_OK
    rng = make_rng(cfg.seed, 0)
    seeds = [np.clip(0.5 + 0.3 * np.sin(2 * np.pi * (k + 1) * profile(lambda u: u, cfg.J)
                                        + rng.uniform(0, 2 * np.pi)), 0.02, 0.98)
             for k in range(cfg.stationary_seeds)]
    E = stationary_set_search(m, PdeParams(J=cfg.J, dt=cfg.dt), seeds)
    text = "".join(",".join(f"{v:.17g}" for v in q) + "\n" for q in E.profiles)
    _emit(text, args.out, "stationary.csv")
    if args.out:
        print(dumps({"count": len(E), "constants": E.constants(), "failures": E.failures}))
    return EXIT_OK


def cmd_rate(args, cfg) -> int:
    m = cfg.model_obj
    pi = read_path_csv(args.path) if args.path else _default_path(cfg)
    flat = np.max(np.ptp(pi.frames, axis=1)) <= 1e-12
    routes = (args.route,)
    if args.route == "all":
        routes = ("variational", "explicit") + (("homogeneous",) if flat else ())
    lines = []
    for route in routes:
        if route == "variational":
            rec = rate_variational(pi, pi.frames[0], m, cfg.K_s, cfg.K_t).as_record()
        elif route == "explicit":
            rec = rate_explicit_smooth(pi, m).as_record()
        else:
            if not flat:
                raise ConfigError("homogeneous route needs a spatially constant path")
            rec = {"type": "rate", "route": "homogeneous",
                   "value": rate_homogeneous(pi.times, pi.frames[:, 0], m)}
        rec["config_hash"] = cfg.hash
        lines.append(dumps(rec))
    _emit("".join(s + "\n" for s in lines), args.out, "rate.ndjson")
    return EXIT_OK


def cmd_smooth(args, cfg) -> int:
    from .smoothing import compose_pipeline
    m = cfg.model_obj
    pi = read_path_csv(args.path) if args.path else _default_path(cfg)
    stages = STAGES if args.stage == "all" else (args.stage,)
    gamma = pi.frames[0]
    base = rate_explicit_smooth(pi, m).value
    rows = []
    result = pi
    for delta, eps, n in cfg.levels:
        result = compose_pipeline(pi, gamma, m, delta, eps, n, stages)
        r = rate_explicit_smooth(result, m).value
        rows.append({"type": "level", "delta": delta, "eps": eps, "n": n, "rate": r,
                     "gap": abs(r - base), "base": base, "config_hash": cfg.hash})
    table = "".join(dumps(r) + "\n" for r in rows)
    if args.out:
        _emit(field_csv(pi), args.out, "before.csv")
        _emit(field_csv(result), args.out, "after.csv")
        _emit(table, args.out, "table.ndjson")
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_experiment(args, cfg) -> int:
    from .experiments import run_experiment
    cfg = cfg.replace(experiment=args.name)
    records = run_experiment(cfg)
    manifest = write_records(records, cfg.out_dir, cfg.data)
    print(manifest)
    return EXIT_NUMERIC if any(r.kind == "failure" for r in records) else EXIT_OK


COMMANDS = {"derive-rates": cmd_derive_rates, "simulate": cmd_simulate, "pde": cmd_pde,
            "stationary": cmd_stationary, "rate": cmd_rate, "smooth": cmd_smooth,
            "experiment": cmd_experiment}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: stdout where sensible)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="gklab", description="Reaction-diffusion lattice lab.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("derive-rates", parents=[common], help="reaction polynomials of a model")
    s = sub.add_parser("simulate", parents=[common], help="particle trajectory as NDJSON")
    s.add_argument("--N", type=int)
    s.add_argument("--block", type=int, help="block width for the recorded averages")
    s = sub.add_parser("pde", parents=[common], help="hydrodynamic solution as CSV")
    s.add_argument("--scheme", choices=SCHEMES, default=SCHEMES[0])
    s = sub.add_parser("stationary", parents=[common], help="stationary profiles")
    s.add_argument("--exact", action="store_true", help="exact invariant law for small N")
    s.add_argument("--N", type=int)
    s = sub.add_parser("rate", parents=[common], help="rate of a path")
    s.add_argument("--route", choices=("variational", "explicit", "homogeneous", "all"),
                   default="all")
    s.add_argument("--path", help="CSV trajectory (t, v_0, ...)")
    s = sub.add_parser("smooth", parents=[common], help="smoothing pipeline on a path")
    s.add_argument("--stage", choices=STAGES + ("all",), default="all")
    s.add_argument("--path", help="CSV trajectory (t, v_0, ...)")
    s = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    s.add_argument("name", choices=EXPERIMENTS)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        over = {"seed": args.seed}
        if args.command == "experiment" and args.out:
            over["out"] = args.out
        cfg = load_config(args.config, **over)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
