"""Command line entry point: ``python -m aarelax {solve,sweep,select-m,trace}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, figures_data
from .accel import RelaxConfig, solve
from .problems import make_problem

EXIT_OK = 0
EXIT_INVALID = 2


class ConfigError(ValueError):
    pass


def _problem_desc(args) -> dict:
    spec = args.problem
    if spec.lstrip().startswith("{"):
        desc = json.loads(spec)
    elif Path(spec).is_file():
        desc = json.loads(Path(spec).read_text())
    else:
        desc = {"type": spec}
    if args.seed is not None:
        desc["seed"] = args.seed
    if args.x0 in ("zeros", "uniform"):
        desc["x0"] = args.x0
    return desc


def _load_x0(arg, n: int):
    if arg is None or arg in ("zeros", "uniform"):
        return None
    x0 = np.loadtxt(arg, dtype=float).ravel()
    if x0.size != n:
        raise ConfigError(f"--x0 has {x0.size} entries, problem dimension is {n}")
    return x0


def cmd_solve(args) -> int:
    config = RelaxConfig(beta_default=args.beta_default, beta_max=args.beta_max, T=args.T,
                         delta=args.delta, P=args.cap_P, regularize=not args.no_reg)
    problem = make_problem(_problem_desc(args))
    rep = solve(problem, args.algo, m=args.m, tol=args.tol, max_maps=args.max_maps,
                config=config, beta=args.beta, composite=args.composite,
                x0=_load_x0(args.x0, problem.n))
    json.dump(rep.to_dict(), sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


def _load_plan(path) -> bench.ExperimentPlan:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read plan {path}: {exc}") from exc
    return bench.ExperimentPlan.from_dict(data)


def cmd_sweep(args) -> int:
    plan = _load_plan(args.plan)
    table, summary = bench.run_experiment(plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_summary_csv(summary, out / "summary.csv")
    prof = table.profile()
    bench.write_profile_csv(prof, out / "profile.csv")
    meta = {"chosen_m": table.chosen_m, "notes": table.notes,
            "profile_excluded_draws": prof.excluded, "draws": plan.draws}
    (out / "sweep.json").write_text(json.dumps(meta, indent=2))
    for note in table.notes:
        print(note, file=sys.stderr)
    print(out / "summary.csv")
    print(out / "profile.csv")
    return EXIT_OK


def cmd_select_m(args) -> int:
    plan = _load_plan(args.plan)
    choice, notes = bench.select_m(bench.pilot_sweep(plan))
    json.dump({"chosen_m": choice, "notes": notes}, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_trace(args) -> int:
    figures = list(figures_data.FIGURES) if args.figure == "all" else [args.figure]
    for fig in figures:
        traces = figures_data.FIGURES[fig](args.m)
        for p in figures_data.write_traces(traces, args.out, fig):
            print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aarelax", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="single run, JSON report on stdout")
    s.add_argument("--problem", required=True,
                   help="linear|bratu|admixture, a JSON descriptor or a JSON file")
    s.add_argument("--algo", default="aa", choices=["aa", "opt0", "opt1", "md"])
    s.add_argument("--m", type=int, default=8)
    s.add_argument("--beta", type=float, default=1.0, help="constant relaxation for --algo aa")
    s.add_argument("--beta-default", type=float, default=1.0)
    s.add_argument("--beta-max", type=float, default=3.0)
    s.add_argument("--T", type=int, default=1)
    s.add_argument("--delta", type=float, default=2.0)
    s.add_argument("--cap-P", type=int, default=10)
    s.add_argument("--no-reg", action="store_true", help="disable beta regularization")
    s.add_argument("--composite", action="store_true")
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--max-maps", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--x0", default=None, help="zeros|uniform or a text file of start values")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="run an experiment plan")
    w.add_argument("plan")
    w.add_argument("--out", default=".")
    w.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select-m", help="pilot sweep and depth selection")
    p.add_argument("plan")
    p.set_defaults(func=cmd_select_m)

    t = sub.add_parser("trace", help="per-iteration trace CSVs")
    t.add_argument("figure", choices=[*figures_data.FIGURES, "all"])
    t.add_argument("--m", type=int, default=None)
    t.add_argument("--out", default="traces")
    t.set_defaults(func=cmd_trace)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ValueError, json.JSONDecodeError, OSError) as exc:
        print(f"aarelax: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
