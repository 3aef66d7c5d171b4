"""Command-line entry point: ``qlangevin <subcommand> ...``.

Exit codes: 0 on success, 1 on a domain error (or a failed verification), 2 on
a configuration or usage error. ``QLANGEVIN_SEED`` overrides the seed of the
config; an explicit ``--seed`` flag overrides both.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import anneal, chains, partition, potential as pot, qsa, walk as wk
from ..domain import tv_distance
from ..errors import ConfigError, QLangevinError
from . import report, verify
from .config import Experiment, load_config, materialise

log = logging.getLogger("qlangevin")

SEED_ENV = "QLANGEVIN_SEED"


def _seed(args, cfg_seed: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return cfg_seed


def _experiment(args, landscape: bool = True) -> Experiment:
    return materialise(load_config(args.config), landscape=landscape)


def _out_dir(args, exp: Optional[Experiment] = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(exp.config.output.dir) if exp is not None else Path("out")


def _constants_dict(c: pot.AssumptionConstants) -> dict:
    return {"L": c.L, "m": c.m, "b": c.b, "G": c.G, "c_lsi": c.c_lsi, "rho": c.rho}


def _emit(args, exp, name: str, payload: dict) -> Path:
    path = report.write_json(_out_dir(args, exp) / f"{name}.json", payload)
    print(path)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_certify(args) -> int:
    exp = _experiment(args, landscape=False)
    fitted = pot.fit_constants(exp.spec, exp.domain.nodes, m=exp.constants.m)
    rep = pot.certify_constants(exp.spec, exp.constants, exp.domain.nodes, probes=args.probes)
    _emit(args, exp, "certify", {
        "potential": exp.spec.name,
        "claimed": _constants_dict(exp.constants),
        "fitted": _constants_dict(fitted),
        "worst": {
            "lipschitz": rep.lipschitz,
            "dissipativity": rep.dissipativity,
            "lower_bound": rep.lower_bound,
            "gradient_growth": rep.gradient_growth,
        },
        "probes": rep.probes,
        "passed": rep.passed,
    })
    return 0


def cmd_chains(args) -> int:
    exp = _experiment(args, landscape=False)
    eta = args.eta if args.eta is not None else exp.config.chain.eta
    pi = chains.gibbs(exp.spec, exp.domain)
    kernels = {
        "mala": chains.mala_kernel(exp.spec, exp.constants, exp.domain, eta),
        "ula": chains.ula_kernel(exp.spec, exp.constants, exp.domain, eta, lazy=exp.config.chain.lazy),
    }
    out = {"eta": eta, "nodes": exp.domain.size, "admissible_step": chains.max_admissible_step(exp.spec, exp.constants, exp.domain.R)}
    mode = "exact" if exp.domain.size <= chains.EXACT_CONDUCTANCE_MAX_NODES else "sweep"
    for name, k in kernels.items():
        stat = chains.stationary(k)
        out[name] = {
            "stationary_tv_to_gibbs": tv_distance(stat, pi),
            "conductance": chains.conductance(k, stat, mode),
            "conductance_mode": mode,
            "detailed_balance_residual": chains.detailed_balance_residual(k, stat),
            "spectral_gap": chains.spectral_gap(k, stat),
        }
    if args.trajectory:
        traj = chains.simulate(args.sampler, exp.spec, np.zeros(exp.spec.d), eta, args.steps,
                               _seed(args, exp.config.run.seed), exp.config.backend.batch, exp.domain.R)
        path = _out_dir(args, exp) / f"trajectory_{args.sampler.lower()}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        traj.to_csv(path)
        out["trajectory"] = {"sampler": args.sampler, "steps": args.steps, "acceptance": float(np.mean(traj.accepted))}
    _emit(args, exp, "chains", out)
    return 0


def cmd_walk_spectrum(args) -> int:
    exp = _experiment(args, landscape=False)
    eta = exp.config.chain.eta
    if args.kernel == "mala":
        kernel = chains.mala_kernel(exp.spec, exp.constants, exp.domain, eta)
    else:
        kernel = chains.ula_kernel(exp.spec, exp.constants, exp.domain, eta, lazy=True)
    walk = wk.build_walk(kernel, "active")
    out_dir = _out_dir(args, exp)
    out_dir.mkdir(parents=True, exist_ok=True)
    wk.write_spectrum_csv(walk, out_dir / f"spectrum_{args.kernel}.csv")
    _emit(args, exp, "walk_spectrum", {
        "kernel": args.kernel,
        "eta": eta,
        "nodes": exp.domain.size,
        "active_dimension": int(walk.basis.shape[1]),
        "phase_gap": wk.phase_gap(walk),
        "lambda1": walk.lambda1,
    })
    return 0


def _schedule(exp: Experiment) -> anneal.AnnealSchedule:
    s = exp.config.schedule
    return anneal.build_schedule(exp.spec, exp.constants, exp.domain, s.epsilon, s.alpha_scale)


def cmd_anneal(args) -> int:
    exp = _experiment(args)
    sched = _schedule(exp)
    rep = anneal.validate_schedule(sched)
    out_dir = _out_dir(args, exp)
    out_dir.mkdir(parents=True, exist_ok=True)
    anneal.write_schedule_csv(sched, out_dir / "schedule.csv")
    _emit(args, exp, "anneal", {
        "constants": _constants_dict(exp.constants),
        "M": sched.M,
        "alpha": sched.alpha,
        "sigma_sq_first": float(sched.sigma_sq[0]),
        "sigma_sq_last": float(sched.sigma_sq[-1]),
        "min_consecutive_overlap": rep.min_consecutive,
        "final_overlap": rep.final_overlap,
        "M_reference": rep.M_reference,
        "checks": rep.checks,
    })
    return 0


def cmd_sample(args) -> int:
    exp = _experiment(args)
    cfg = exp.config
    backend = args.backend or cfg.backend.name
    seed = _seed(args, cfg.run.seed)
    eta = args.eta if args.eta is not None else cfg.chain.eta
    sched = _schedule(exp)
    res = qsa.run_annealing(sched, backend, eta, cfg.run.epsilon, seed=seed, c_proj=cfg.backend.c_proj,
                            batch_size=cfg.backend.batch)
    meas = qsa.measure(wk.StateVector(res.state, "product"), cfg.run.shots, seed)
    payload = res.report()
    payload["measurement"] = {
        "shots": cfg.run.shots,
        "empirical_tv_to_state": meas.empirical_tv,
        "empirical_tv_to_gibbs": tv_distance(meas.frequencies, anneal.stage_distribution(sched, sched.M)),
    }
    _emit(args, exp, f"sample_{backend}", payload)
    return 0


def cmd_partition(args) -> int:
    exp = _experiment(args)
    sched = _schedule(exp)
    eps = args.epsilon if args.epsilon is not None else exp.config.run.epsilon
    est = partition.estimate_partition(sched, eps, mode=args.mode, seed=_seed(args, exp.config.run.seed),
                                       eta=exp.config.chain.eta)
    payload = est.report()
    payload["relative_error"] = est.relative_error
    _emit(args, exp, f"partition_{args.mode}", payload)
    return 0


def cmd_verify(args) -> int:
    try:
        verdict = verify.verify_suite(args.suite, args.instances, _seed(args))
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    out = Path(args.out) if args.out else Path("out")
    path = report.write_json(out / f"verify_{args.suite}.json", verdict.as_dict())
    print(path)
    print(f"{args.suite}: {len(verdict.rows)} rows, {verdict.violations} violations")
    return 0 if verdict.passed else 1


def cmd_bench(args) -> int:
    exp = _experiment(args)
    sched = _schedule(exp)
    etas = [float(e) for e in args.etas.split(",")]
    rows = []
    for eta in etas:
        res = qsa.run_annealing(sched, "mala", eta, exp.config.run.epsilon, seed=_seed(args, exp.config.run.seed),
                                c_proj=exp.config.backend.c_proj)
        rows.append({"eta": eta, **res.ledger.as_dict(), "final_tv": res.final_tv})
    slope = float(np.polyfit(np.log(etas), np.log([r["walk_applications"] for r in rows]), 1)[0]) if len(etas) > 1 else math.nan
    _emit(args, exp, "bench", {"M": sched.M, "runs": rows, "walk_application_slope": slope})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qlangevin", description="Quantum-walk Langevin sampling simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", help="output directory (default: output.dir of the config)")
        return p

    p = with_config("certify", "audit the claimed constants on the grid")
    p.add_argument("--probes", type=int, default=200)
    p.set_defaults(func=cmd_certify)

    p = with_config("chains", "classical kernel diagnostics")
    p.add_argument("--eta", type=float)
    p.add_argument("--trajectory", action="store_true", help="also simulate a continuous trajectory")
    p.add_argument("--sampler", choices=["ULA", "MALA", "SGLD"], default="MALA")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_chains)

    p = with_config("walk-spectrum", "active-space eigenphases of a walk")
    p.add_argument("--kernel", choices=["mala", "ula"], default="mala")
    p.set_defaults(func=cmd_walk_spectrum)

    p = with_config("anneal", "build and validate the annealing schedule")
    p.set_defaults(func=cmd_anneal)

    p = with_config("sample", "run the annealed sampler and measure")
    p.add_argument("--backend", choices=list(qsa.BACKENDS))
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sample)

    p = with_config("partition", "estimate the partition function")
    p.add_argument("--mode", choices=["exact", "sampled"], default="exact")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("verify", help="run an inequality verification suite")
    p.add_argument("--suite", required=True, help=f"one of {', '.join(verify.SUITE_NAMES)}, all")
    p.add_argument("--instances", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: out)")
    p.set_defaults(func=cmd_verify)

    p = with_config("bench", "walk-application scaling over a step sweep")
    p.add_argument("--etas", default="0.04,0.01,0.0025")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", chains.StepSizeWarning)
            code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except QLangevinError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
