"""Command line entry point: ``fbsdegame <command> CONFIG [options]``.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 failed
property (``verify`` only). Messages go to standard error. Artifacts are
written only after the configuration has been parsed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels, game, pde, verify
from .algebraic import RepresentationError
from .bsde import FixedPointError
from .config import ConfigError, read_config
from .expr import EvaluationError, ExpressionError
from .fbsde import PicardError
from .fieldio import export_field
from .game import ProblemError, certify, isaacs_gap, problem_from_config
from .stochastics import CFLError, sample_paths

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PROPERTY = 0, 1, 2, 3

SOLVER_ERRORS = (CFLError, PicardError, FixedPointError, RepresentationError, pde.PDEError,
                 ProblemError, EvaluationError, ArithmeticError)


class _ConfigFailure(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbsdegame", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="configuration file")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--seed", type=int, default=0, help="seed for probes and sampling")
        sp.add_argument("--nt", type=int, default=None, help="override [grid] n_steps")
        sp.add_argument("--nx", type=int, default=None, help="override [grid] n_nodes")
        return sp

    common(sub.add_parser("check", help="run the coefficient certificates"))
    sg = common(sub.add_parser("solve-game", help="lower and upper value fields by dynamic programming"))
    sg.add_argument("--kind", choices=("lower", "upper", "both"), default="both")
    sg.add_argument("--components", action="store_true", help="also export Z and K columns")
    sp = common(sub.add_parser("solve-pde", help="finite-difference Isaacs equation"))
    sp.add_argument("--kind", choices=("lower", "upper"), default="lower")
    sp.add_argument("--components", action="store_true", help="also export Z and K columns")
    vf = common(sub.add_parser("verify", help="property suite with a JSON report"))
    vf.add_argument("--suite", default="all", help="'all' or comma-separated property ids")
    sm = common(sub.add_parser("simulate", help="path statistics and Monte Carlo cost estimate"))
    sm.add_argument("--n-paths", type=int, default=4000)
    return p


def _meta(args, problem, **extra) -> dict:
    m = {"program": f"fbsdegame {__version__}", "command": args.command,
         "config": Path(args.config).name, "config_digest": problem.digest, "seed": args.seed,
         "n_steps": problem.time.n_steps, "n_nodes": problem.space.n_nodes, "backend": _kernels.backend()}
    m.update(extra)
    return m


def _load(args):
    try:
        cfg = read_config(args.config)
        return problem_from_config(cfg, nt=args.nt, nx=args.nx, check=False), cfg
    except (ConfigError, ExpressionError) as exc:
        raise _ConfigFailure(f"{args.config}: {exc}") from None


def _certified(problem):
    pb = problem
    cs, h22, cert, small, note = certify(
        pb.cs, pb.levy, pb.controls, pb.cert, pb.time, probes=pb.settings["probes"],
        box=pb.settings["box"], lip_cap=pb.settings["lip_cap"], growth_cap=pb.settings["growth_cap"],
        threshold=pb.settings["smallness_threshold"])
    return replace(pb, cs=cs, cert=cert, smallness=small, h22=h22, exemption=note)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=verify._jsonable) + "\n", encoding="utf-8")


def cmd_check(args, problem) -> int:
    pb = problem
    from .coeffs import check_h22, check_h23, check_h31
    kw = dict(box=pb.settings["box"], t_range=(pb.time.t0, pb.time.T), controls=pb.controls)
    h22 = check_h22(pb.cs, pb.levy, pb.settings["probes"], args.seed, lip_cap=pb.settings["lip_cap"],
                    growth_cap=pb.settings["growth_cap"], **kw)
    cs = h22.apply(pb.cs)
    cert = check_h23(cs, pb.levy, pb.cert, pb.settings["probes"], args.seed, **kw)
    small = check_h31(cs, pb.levy, pb.settings["probes"], args.seed,
                      threshold=pb.settings["smallness_threshold"], **kw)
    accepted = h22.passed and small.holds and (cert.verified or cs.decoupled)
    report = {
        "meta": _meta(args, pb),
        "growth_lipschitz": {"passed": h22.passed, "lipschitz": h22.lipschitz, "growth": h22.growth,
                             "k_nondecreasing": h22.k_nondecreasing},
        "monotonicity": {"verified": cert.verified, "worst_violation": cert.worst_violation,
                         "decoupled_exemption": (not cert.verified) and cs.decoupled},
        "smallness": {"holds": small.holds, "L_sigma": small.L_sigma, "C_h": small.C_tilde_h,
                      "threshold": small.threshold},
        "special_case": cs.special,
        "accepted": accepted,
    }
    _write_json(_outdir(args) / "check.json", verify._clean(report))
    print(f"growth/Lipschitz: {'ok' if h22.passed else 'FAILED'}; monotonicity: "
          f"{'verified' if cert.verified else 'not verified'} (worst {cert.worst_violation:.3g})"
          f"{' [decoupled exemption]' if not cert.verified and cs.decoupled else ''}; smallness: "
          f"{'ok' if small.holds else 'FAILED'} (L_sigma={small.L_sigma:.3g})")
    if not accepted:
        print("coefficient certificates rejected this configuration", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_solve_game(args, problem) -> int:
    pb = _certified(problem)
    out = _outdir(args)
    kinds = ("lower", "upper") if args.kind == "both" else (args.kind,)
    fields = {}
    for kind in kinds:
        fields[kind] = game.value(pb, kind)
        export_field(fields[kind], out / f"game_{kind}.csv", meta=_meta(args, pb, kind=kind),
                     components=args.components)
        print(f"wrote {out / f'game_{kind}.csv'}")
    if len(fields) == 2:
        rep = isaacs_gap(fields["lower"], fields["upper"])
        export_field(fields["lower"], out / "isaacs_gap.csv",
                     meta=_meta(args, pb, kind="lower", max_gap=format(rep.max_gap, ".17g"),
                                value_exists=rep.value_exists), gap=rep.gap_field)
        print(f"Isaacs gap {rep.max_gap:.6g} (tolerance {rep.tol:.3g}): "
              f"{'value exists' if rep.value_exists else 'no value on this grid'}")
    return EXIT_OK


def cmd_solve_pde(args, problem) -> int:
    pb = _certified(problem)
    solver = pde.solve_hjbi_special if pb.cs.special else pde.solve_hjbi_general
    field = solver(pb, args.kind)
    out = _outdir(args)
    path = out / f"pde_{args.kind}.csv"
    meta = _meta(args, pb, kind=args.kind, solver=solver.__name__,
                 clamp_events=field.meta.get("clamp_events", 0))
    export_field(field, path, meta=meta, components=args.components)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args, problem) -> int:
    pb = _certified(problem)
    sel = None if args.suite == "all" else [s.strip() for s in args.suite.split(",") if s.strip()]
    unknown = [s for s in (sel or []) if s not in verify.PROPERTIES]
    if unknown:
        raise _ConfigFailure(f"unknown property ids: {', '.join(unknown)}")
    rep = verify.run_suite(pb, sel, seed=args.seed)
    path = _outdir(args) / "verify.json"
    path.write_text(rep.to_json(), encoding="utf-8")
    for e in rep.entries:
        print(f"{e['id']:<20} {e['status']:<8} measured={e['measured']} tol={e['tol']}")
    print(f"wrote {path}")
    return EXIT_OK if rep.passed else EXIT_PROPERTY


def cmd_simulate(args, problem) -> int:
    pb = problem
    paths = sample_paths(pb.time, pb.levy, args.n_paths, args.seed)
    dB = paths.brownian_increments
    stats = {"meta": _meta(args, pb, n_paths=args.n_paths, generator=paths.generator),
             "brownian": {"mean": float(dB.mean()), "variance": float(dB.var()), "expected_variance": pb.time.dt},
             "jumps": [{"atom": e, "mean_count": float(paths.jump_counts[:, :, i].mean()),
                        "expected": lam * pb.time.dt}
                       for i, (e, lam) in enumerate(zip(pb.levy.atoms, pb.levy.lam))]}
    ev = verify.expected_value_reduction(pb, n_paths=(args.n_paths,), seeds=(args.seed,))
    stats["cost"] = {"policy": list(pb.controls.pairs[0]), "grid_value": ev.grid_value,
                     "mc_mean": ev.means[0], "mc_standard_error": ev.ses[0], "gap": ev.gap}
    path = _outdir(args) / "simulate.json"
    _write_json(path, verify._clean(stats))
    print(f"grid value {ev.grid_value:.6g}, Monte Carlo {ev.means[0]:.6g} +- {ev.ses[0]:.2g}; wrote {path}")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "solve-game": cmd_solve_game, "solve-pde": cmd_solve_pde,
            "verify": cmd_verify, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        problem, _ = _load(args)
        return COMMANDS[args.command](args, problem)
    except _ConfigFailure as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except np.linalg.LinAlgError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
