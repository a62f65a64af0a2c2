"""Command-line interface.

    dpvi run --config experiment.json [--out DIR] [--jobs N]
    dpvi validate --config experiment.json
    dpvi metrics --particles snapshot.csv --target target.json --reference ref.csv

Exit codes: 0 success, 1 configuration error, 2 runtime failure. The
environment variable DPVI_MAX_JOBS caps the worker count of `run`.
"""

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .harness import (
    ConfigError,
    build_target,
    load_config,
    run_experiment,
    write_outputs,
)
from .kernels import median_bandwidth
from .metrics import DiscreteMeasure, component_mass, ksd_squared, w2_exact

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _build_parser():
    parser = argparse.ArgumentParser(prog="dpvi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config and write outputs")
    p_run.add_argument("--config", required=True, help="path to the JSON experiment config")
    p_run.add_argument("--out", default=None, help="output directory (overrides config output_dir)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p_val = sub.add_parser("validate", help="validate a config file and exit")
    p_val.add_argument("--config", required=True)

    p_met = sub.add_parser("metrics", help="re-evaluate metrics on a saved particle snapshot")
    p_met.add_argument("--particles", required=True, help="particle snapshot CSV (id,weight,x0,...)")
    p_met.add_argument("--target", required=True, help="JSON file with a config-style target object")
    p_met.add_argument("--reference", required=True, help="reference CSV (snapshot format or bare coordinates)")
    p_met.add_argument("--metrics", default="w2,ksd", help="comma-separated subset of w2,ksd,component_mass")
    p_met.add_argument("--ksd-bandwidth", type=float, default=None)
    return parser


def _read_snapshot(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = rows[0]
    if header and header[0].strip().lower() == "id":
        cols = [c.strip().lower() for c in header]
        if "weight" not in cols:
            raise ConfigError(f"{path}: snapshot header must contain a weight column")
        wi = cols.index("weight")
        data = np.asarray([[float(v) for v in r] for r in rows[1:]], dtype=float)
        weights = data[:, wi]
        points = data[:, wi + 1 :]
    else:
        start = 0
        try:
            float(header[0])
        except ValueError:
            start = 1
        data = np.asarray([[float(v) for v in r] for r in rows[start:]], dtype=float)
        points = data
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
    return DiscreteMeasure(points, weights / weights.sum())


def _cmd_run(args):
    config = load_config(args.config)
    out_dir = args.out or config.output_dir
    if not out_dir:
        raise ConfigError("no output directory: set config output_dir or pass --out")
    table = run_experiment(config, jobs=args.jobs)
    written = write_outputs(table, config, out_dir)
    failures = [r for r in table.runs if r.error is not None]
    print(f"wrote {len(written)} files to {out_dir}" + (f" ({len(failures)} runs failed)" if failures else ""))
    return EXIT_RUNTIME if len(failures) == len(table.runs) else EXIT_OK


def _cmd_validate(args):
    config = load_config(args.config)
    n_runs = len(config.algorithm_names) * len(config.particle_counts) * config.repeats
    print(f"config ok: {len(config.algorithm_names)} algorithms, "
          f"{len(config.particle_counts)} particle counts, {config.repeats} repeats ({n_runs} runs)")
    return EXIT_OK


def _cmd_metrics(args):
    with open(args.target) as fh:
        target_obj = json.load(fh)
    from .harness import _validate_target  # same validation as experiment configs

    target = build_target(_validate_target(target_obj))
    measure = _read_snapshot(args.particles)
    reference = _read_snapshot(args.reference)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for name in wanted:
        if name == "w2":
            print(f"w2,{w2_exact(measure, reference)[0]!r}")
        elif name == "ksd":
            h = args.ksd_bandwidth or median_bandwidth(measure.atoms)
            print(f"ksd,{ksd_squared(target, measure, h)!r}")
            print(f"ksd_bandwidth,{h!r}")
        elif name == "component_mass":
            for j, mass in enumerate(component_mass(target, measure)):
                print(f"component_mass_{j},{float(mass)!r}")
        else:
            raise ConfigError(f"unknown metric {name!r}")
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_metrics(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
