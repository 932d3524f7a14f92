"""Command-line entry point.

Subcommands: gen-data (write per-client CSVs), run (single trainer run),
compare (all five trainers on one configuration), sweep (k0/alpha sweeps).
Exit codes: 0 converged, 2 usage error, 3 iteration cap, 4 diverged.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness
from .data import SyntheticSpec, generate_linear_noniid, load_dataset, partition_dataset
from .harness import COMPARE_ALGORITHMS, ConfigError, ExperimentConfig, parse_config
from .losses import LossModel
from .plots import render_compare_figure, render_run_figure, render_sweep_figure

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ITERCAP = 3
EXIT_DIVERGED = 4

_STATUS_CODES = {"Converged": EXIT_OK, "IterCap": EXIT_ITERCAP, "Diverged": EXIT_DIVERGED}


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedgia")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate per-client synthetic CSV files")
    g.add_argument("--m", type=int, default=128)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--dmin", type=int, default=50)
    g.add_argument("--dmax", type=int, default=150)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="data")

    r = sub.add_parser("run", help="run one trainer and write a trace CSV")
    r.add_argument("--algo", default="fedgia-g",
                   help="fedavg | fedprox | fedpd | fedgia-d | fedgia-g")
    r.add_argument("--loss", default="ls", help="ls | logl2 | lognc")
    r.add_argument("--k0", type=int, default=1)
    r.add_argument("--alpha", type=float, default=1.0)
    r.add_argument("--t", type=float, default=None)
    r.add_argument("--variant", default=None, help="gram | diag (overrides --algo suffix)")
    r.add_argument("--tol", type=float, default=None)
    r.add_argument("--max-iter", type=int, default=10_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--data", default=None, help="dataset file (CSV or LIBSVM)")
    r.add_argument("--format", default="csv", help="csv | libsvm")
    r.add_argument("--m", type=int, default=128, help="client count for --data partitioning")
    r.add_argument("--synthetic", nargs="*", default=None, metavar="KEY=VAL",
                   help="synthetic problem spec, e.g. m=32 n=50 dmin=50 dmax=150")
    r.add_argument("--out", default="run_out")

    for name in ("compare", "sweep"):
        c = sub.add_parser(name, help=f"{name} experiments from a config file")
        c.add_argument("--config", required=True)
        c.add_argument("--workers", type=int, default=1)
    return parser


def _parse_synthetic_tokens(tokens, loss, seed) -> SyntheticSpec:
    known = {"m": 128, "n": 100, "dmin": 50, "dmax": 150}
    for tok in tokens or []:
        key, eq, val = tok.partition("=")
        if not eq or key not in known:
            raise ConfigError(f"bad --synthetic token {tok!r} (want m=, n=, dmin=, dmax=)")
        try:
            known[key] = int(val)
        except ValueError:
            raise ConfigError(f"bad --synthetic value {tok!r}") from None
    return SyntheticSpec(known["m"], known["n"], (known["dmin"], known["dmax"]), seed)


def cmd_gen_data(args) -> int:
    if args.dmin > args.dmax:
        return _fail(f"invalid range: dmin {args.dmin} > dmax {args.dmax}")
    try:
        spec = SyntheticSpec(args.m, args.n, (args.dmin, args.dmax), args.seed)
    except ValueError as exc:
        return _fail(str(exc))
    problem = generate_linear_noniid(spec)
    try:
        os.makedirs(args.out, exist_ok=True)
        sizes = []
        for i, client in enumerate(problem.clients):
            path = os.path.join(args.out, f"client_{i:03d}.csv")
            rows = np.column_stack([client.features, client.labels])
            with open(path, "w", encoding="utf-8", newline="") as fh:
                for row in rows:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            sizes.append(client.d)
        manifest = {"m": args.m, "n": args.n, "dmin": args.dmin, "dmax": args.dmax,
                    "seed": args.seed, "sizes": sizes}
        with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        return _fail(f"cannot write to {args.out}: {exc}")
    print(f"wrote {problem.m} client files to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.algo not in harness.ALGORITHMS:
        return _fail(f"unknown algo {args.algo!r}")
    loss = LossModel(args.loss)
    try:
        if args.data is not None:
            features, labels = load_dataset(args.data, args.format)
            problem = partition_dataset(features, labels, args.m, args.seed, loss)
        else:
            spec = _parse_synthetic_tokens(args.synthetic, loss, args.seed)
            problem = generate_linear_noniid(spec, loss)
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(str(exc))

    algo = args.algo
    if args.variant is not None and algo.startswith("fedgia"):
        algo = "fedgia-d" if args.variant == "diag" else "fedgia-g"
    trace = harness.run_algorithm(
        algo, problem, args.k0, args.alpha,
        tol=args.tol, t=args.t, max_iter=args.max_iter, seed=args.seed,
        n_workers=args.workers,
    )
    os.makedirs(args.out, exist_ok=True)
    harness.write_trace_csv(trace, os.path.join(args.out, "trace.csv"))
    render_run_figure(trace, os.path.join(args.out, "trace.png"), title=algo)
    row = trace.rows[-1]
    print(f"{row.objective} {row.error} {row.cr} {row.elapsed_s}")
    return _STATUS_CODES[trace.status]


def cmd_compare(args) -> int:
    try:
        config = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc))
    config.algorithms = list(COMPARE_ALGORITHMS)
    config.k0_list = config.k0_list[:1]
    config.alpha_list = config.alpha_list[:1]
    result = harness.run_experiment(config, n_workers=args.workers)
    _report(result, config)
    k0, alpha = config.k0_list[0], config.alpha_list[0]
    first = {
        algo: result.traces[(algo, k0, alpha, 0)]
        for algo in config.algorithms
        if (algo, k0, alpha, 0) in result.traces
    }
    if first:
        render_compare_figure(first, os.path.join(config.out_dir, "objective_vs_cr.png"))
    return _finish(result, config)


def cmd_sweep(args) -> int:
    try:
        config = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc))
    result = harness.run_experiment(config, n_workers=args.workers)
    _report(result, config)
    axis = "k0" if len(config.k0_list) >= len(config.alpha_list) else "alpha"
    if result.rows:
        render_sweep_figure(result.rows, axis, os.path.join(config.out_dir, f"cr_vs_{axis}.png"))
    return _finish(result, config)


def _report(result, config) -> None:
    print(f"summary: {result.summary_path} ({len(result.rows)} rows)")
    for failure in result.failures:
        print(f"failed: {failure}", file=sys.stderr)


def _finish(result, config) -> int:
    if harness.failure_rate(result, config) > 0.10:
        print("error: more than 10% of runs failed", file=sys.stderr)
        return 1
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "gen-data": cmd_gen_data,
        "run": cmd_run,
        "compare": cmd_compare,
        "sweep": cmd_sweep,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
