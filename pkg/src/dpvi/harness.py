"""Experiment harness: JSON configs, seeded repeats, metrics, and file outputs.

A config describes one experiment: a target, a list of algorithms, particle
counts to sweep, repeat count, a shared reference measure, and the metrics to
evaluate. Every run gets a child seed derived from (global seed, algorithm
index, particle count, repeat), so the whole experiment is reproducible
byte-for-byte and independent runs can execute on a worker pool.
"""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .engine import AlgorithmSpec, Ensemble, run
from .kernels import KernelConfig, median_bandwidth
from .metrics import DiscreteMeasure, component_mass, ksd_squared, w2_exact
from .targets import (
    GaussianMixtureTarget,
    GaussianTarget,
    GPRegressionTarget,
    grid_reference,
    load_lidar,
    sample_reference,
    synthetic_lidar,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultsTable",
    "RunResult",
    "load_config",
    "validate_config",
    "build_target",
    "run_experiment",
    "write_outputs",
]

logger = logging.getLogger("dpvi")

# algorithm presets: label -> (family, weight_strategy, langevin)
ALGORITHM_PRESETS = {
    "SVGD": ("svgd", "fixed", False),
    "GFSD": ("gfsd", "fixed", False),
    "Blob": ("blob", "fixed", False),
    "KSDD": ("ksdd", "fixed", False),
    "D-GFSD-CA": ("gfsd", "ca", False),
    "D-GFSD-DK": ("gfsd", "dk", False),
    "D-Blob-CA": ("blob", "ca", False),
    "D-Blob-DK": ("blob", "dk", False),
    "D-KSDD-CA": ("ksdd", "ca", False),
    "D-KSDD-DK": ("ksdd", "dk", False),
    "ULD": ("gfsd", "fixed", True),
    "BDLS": ("gfsd", "dk", True),
}

METRIC_NAMES = ("w2", "ksd", "component_mass")

DEFAULT_GP_BOUNDS = [[-5.0, 3.0], [-5.0, 5.0]]


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (plain data, picklable)."""

    seed: int
    target: dict
    algorithm_names: tuple
    algorithm_specs: tuple  # AlgorithmSpec templates; per-run seed filled later
    particle_counts: tuple
    repeats: int
    reference: dict
    metrics: tuple
    metric_cadence: int
    init_mean: tuple | None
    init_std: float
    output_dir: str | None
    plots: bool
    ksd_bandwidth: float | None


@dataclass
class RunResult:
    """Outcome of a single (algorithm, particle count, repeat) run."""

    algorithm: str
    particles: int
    repeat: int
    seed: int
    wall_time: float
    metrics: dict
    trace: list
    final: Ensemble | None
    error: str | None = None


@dataclass
class ResultsTable:
    """All run results of one experiment, in deterministic order."""

    runs: list

    def metric_rows(self):
        """Flatten to (algorithm, particles, repeat, seed, metric, value,
        wall_time, error) rows, one per metric (a single error row for a
        failed run)."""
        rows = []
        for r in self.runs:
            if r.error is not None:
                rows.append((r.algorithm, r.particles, r.repeat, r.seed, "error", float("nan"), r.wall_time, r.error))
                continue
            for name, value in r.metrics.items():
                rows.append((r.algorithm, r.particles, r.repeat, r.seed, name, value, r.wall_time, ""))
        return rows


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def _check_keys(obj, allowed, where):
    unknown = set(obj) - set(allowed)
    _require(not unknown, f"{where}: unknown keys {sorted(unknown)}")


def _validate_target(raw):
    _require(isinstance(raw, dict), "target: must be an object")
    kind = raw.get("kind")
    _require(kind in ("gaussian", "mixture", "gp"), f"target.kind: expected gaussian|mixture|gp, got {kind!r}")
    if kind == "gaussian":
        _check_keys(raw, {"kind", "mean", "covariance"}, "target")
        _require("mean" in raw and "covariance" in raw, "target: gaussian needs mean and covariance")
        out = dict(raw)
    elif kind == "mixture":
        _check_keys(raw, {"kind", "weights", "means", "covariances"}, "target")
        params = [k for k in ("weights", "means", "covariances") if k in raw]
        _require(
            len(params) in (0, 3),
            "target: mixture needs all of weights/means/covariances, or none for the default",
        )
        out = dict(raw)
        if not params:
            out.update(
                weights=[1.0 / 3.0, 2.0 / 3.0],
                means=[[-2.0, 0.0], [2.0, 0.0]],
                covariances=[[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]],
            )
    else:
        _check_keys(
            raw,
            {"kind", "dataset", "noise_variance", "prior_mode", "synthetic_n", "synthetic_seed"},
            "target",
        )
        out = {
            "kind": "gp",
            "dataset": raw.get("dataset"),
            "noise_variance": float(raw.get("noise_variance", 0.04)),
            "prior_mode": raw.get("prior_mode", "literal_constant"),
            "synthetic_n": int(raw.get("synthetic_n", 221)),
            "synthetic_seed": int(raw.get("synthetic_seed", 0)),
        }
        _require(out["prior_mode"] in ("literal_constant", "phi_prior"), "target.prior_mode: invalid")
    return out


def build_target(target_spec):
    """Construct the target model described by a validated target object."""
    kind = target_spec["kind"]
    if kind == "gaussian":
        return GaussianTarget(target_spec["mean"], target_spec["covariance"])
    if kind == "mixture":
        return GaussianMixtureTarget(
            target_spec["weights"], target_spec["means"], target_spec["covariances"]
        )
    if kind == "gp":
        if target_spec.get("dataset"):
            x, y = load_lidar(target_spec["dataset"])
        else:
            x, y = synthetic_lidar(
                n=target_spec.get("synthetic_n", 221), seed=target_spec.get("synthetic_seed", 0)
            )
        return GPRegressionTarget(
            x,
            y,
            noise_variance=target_spec.get("noise_variance", 0.04),
            prior_mode=target_spec.get("prior_mode", "literal_constant"),
        )
    raise ConfigError(f"target.kind: unknown {kind!r}")


_ALG_KEYS = {
    "name",
    "family",
    "weight_strategy",
    "langevin",
    "eta",
    "lambda",
    "iterations",
    "weight_floor",
    "dk_noise_scale",
    "bandwidth",
    "recompute_every",
}


def _validate_algorithm(raw, index, default_eta):
    where = f"algorithms[{index}]"
    _require(isinstance(raw, dict), f"{where}: must be an object")
    _check_keys(raw, _ALG_KEYS, where)
    name = raw.get("name")
    _require(isinstance(name, str) and name, f"{where}.name: required")

    if name in ALGORITHM_PRESETS:
        for key in ("family", "weight_strategy", "langevin"):
            _require(key not in raw, f"{where}.{key}: implied by preset name {name!r}")
        family, strategy, langevin = ALGORITHM_PRESETS[name]
    else:
        _require("family" in raw and "weight_strategy" in raw,
                 f"{where}: non-preset name needs family and weight_strategy")
        family = raw["family"]
        strategy = raw["weight_strategy"]
        langevin = bool(raw.get("langevin", False))

    bandwidth = raw.get("bandwidth", "median")
    if bandwidth == "median":
        bw = None
    else:
        _require(isinstance(bandwidth, (int, float)) and bandwidth > 0,
                 f"{where}.bandwidth: 'median' or a positive number")
        bw = float(bandwidth)
    try:
        kernel = KernelConfig(bandwidth=bw, recompute_every=int(raw.get("recompute_every", 1)))
        spec = AlgorithmSpec(
            family=family,
            weight_strategy=strategy,
            eta=float(raw.get("eta", default_eta)),
            lam=float(raw.get("lambda", 1.0)),
            iterations=int(raw.get("iterations", 2000)),
            seed=0,
            weight_floor=float(raw.get("weight_floor", 1e-8)),
            dk_noise_scale=float(raw.get("dk_noise_scale", 1.0)),
            langevin=langevin,
            kernel=kernel,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return name, spec


def _validate_reference(raw, target_kind):
    defaults = (
        {"kind": "grid", "bounds": DEFAULT_GP_BOUNDS, "resolution": 200, "n": 2000}
        if target_kind == "gp"
        else {"kind": "samples", "n": 500}
    )
    if raw is None:
        return defaults
    _require(isinstance(raw, dict), "reference: must be an object")
    kind = raw.get("kind", defaults["kind"])
    if kind == "samples":
        _check_keys(raw, {"kind", "n"}, "reference")
        _require(target_kind != "gp", "reference: GP posterior has no exact sampler; use kind 'grid'")
        n = int(raw.get("n", 500))
        _require(n >= 1, "reference.n: must be >= 1")
        return {"kind": "samples", "n": n}
    if kind == "grid":
        _check_keys(raw, {"kind", "bounds", "resolution", "n"}, "reference")
        out = {
            "kind": "grid",
            "bounds": raw.get("bounds", DEFAULT_GP_BOUNDS),
            "resolution": int(raw.get("resolution", 200)),
            "n": int(raw.get("n", 2000)),
        }
        bounds = np.asarray(out["bounds"], dtype=float)
        _require(bounds.shape == (2, 2), "reference.bounds: expected [[lo,hi],[lo,hi]]")
        _require(out["resolution"] >= 50, "reference.resolution: must be >= 50")
        _require(out["n"] >= 1, "reference.n: must be >= 1")
        return out
    raise ConfigError(f"reference.kind: expected samples|grid, got {kind!r}")


_TOP_KEYS = {
    "seed",
    "target",
    "algorithms",
    "particle_counts",
    "repeats",
    "reference",
    "metrics",
    "metric_cadence",
    "init",
    "output_dir",
    "plots",
    "ksd_bandwidth",
}


def validate_config(raw):
    """Validate a parsed config object and fill defaults; returns ExperimentConfig."""
    _require(isinstance(raw, dict), "config: top level must be an object")
    _check_keys(raw, _TOP_KEYS, "config")
    _require("target" in raw, "config.target: required")
    _require("algorithms" in raw, "config.algorithms: required")

    target = _validate_target(raw["target"])
    default_eta = 0.01 if target["kind"] == "gp" else 0.05

    algorithms = raw["algorithms"]
    _require(isinstance(algorithms, list) and algorithms, "config.algorithms: non-empty list required")
    names, specs = [], []
    for i, entry in enumerate(algorithms):
        name, spec = _validate_algorithm(entry, i, default_eta)
        names.append(name)
        specs.append(spec)
    _require(len(set(names)) == len(names), "config.algorithms: duplicate names")

    counts = raw.get("particle_counts", [10])
    _require(isinstance(counts, list) and counts and all(isinstance(c, int) and c >= 1 for c in counts),
             "config.particle_counts: list of integers >= 1 required")

    repeats = raw.get("repeats", 1)
    _require(isinstance(repeats, int) and repeats >= 1, "config.repeats: must be an integer >= 1")

    metrics = tuple(raw.get("metrics", ["w2"]))
    for m in metrics:
        _require(m in METRIC_NAMES, f"config.metrics: unknown metric {m!r}")
    _require(len(set(metrics)) == len(metrics), "config.metrics: duplicate entries")
    if "component_mass" in metrics:
        _require(target["kind"] == "mixture", "config.metrics: component_mass needs a mixture target")

    cadence = raw.get("metric_cadence", 0)
    _require(isinstance(cadence, int) and cadence >= 0, "config.metric_cadence: integer >= 0")

    init = raw.get("init", {})
    _require(isinstance(init, dict), "config.init: must be an object")
    _check_keys(init, {"mean", "std"}, "config.init")
    init_mean = init.get("mean")
    if init_mean is not None:
        init_mean = tuple(float(v) for v in np.atleast_1d(init_mean))
    init_std = float(init.get("std", 1.0))
    _require(init_std > 0, "config.init.std: must be > 0")

    ksd_bw = raw.get("ksd_bandwidth")
    if ksd_bw is not None:
        _require(isinstance(ksd_bw, (int, float)) and ksd_bw > 0, "config.ksd_bandwidth: positive number")
        ksd_bw = float(ksd_bw)

    return ExperimentConfig(
        seed=int(raw.get("seed", 0)),
        target=target,
        algorithm_names=tuple(names),
        algorithm_specs=tuple(specs),
        particle_counts=tuple(counts),
        repeats=repeats,
        reference=_validate_reference(raw.get("reference"), target["kind"]),
        metrics=metrics,
        metric_cadence=cadence,
        init_mean=init_mean,
        init_std=init_std,
        output_dir=raw.get("output_dir"),
        plots=bool(raw.get("plots", False)),
        ksd_bandwidth=ksd_bw,
    )


def load_config(path):
    """Parse and validate a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return validate_config(raw)


def _child_seeds(global_seed, spawn_key):
    state = np.random.SeedSequence(global_seed, spawn_key=spawn_key).generate_state(4)
    return (
        int(state[0]) << 32 | int(state[1]),
        int(state[2]) << 32 | int(state[3]),
    )


def child_run_seed(config, alg_index, particles, repeat):
    """Seed of the dynamics RNG for one run; injective over its indices."""
    return _child_seeds(config.seed, (1, alg_index, particles, repeat))[1]


def build_reference(config, target):
    """The shared reference measure all runs of a config are scored against."""
    ref_seed, _ = _child_seeds(config.seed, (0,))
    if config.reference["kind"] == "samples":
        points = sample_reference(target, config.reference["n"], ref_seed)
    else:
        points = grid_reference(
            target,
            config.reference["bounds"],
            config.reference["resolution"],
            config.reference["n"],
            ref_seed,
        )
    return DiscreteMeasure.from_samples(points)


def _metric_values(config, target, reference, ensemble):
    measure = DiscreteMeasure.from_ensemble(ensemble)
    out = {}
    for name in config.metrics:
        if name == "w2":
            out["w2"] = w2_exact(measure, reference)[0]
        elif name == "ksd":
            h = config.ksd_bandwidth
            if h is None:
                h = median_bandwidth(measure.atoms)
            out["ksd"] = ksd_squared(target, measure, h)
            out["ksd_bandwidth"] = h
        elif name == "component_mass":
            masses = component_mass(target, measure)
            for j, mass in enumerate(masses):
                out[f"component_mass_{j}"] = float(mass)
    return out


def _execute_run(config, alg_index, particles, repeat, ref_atoms, ref_masses):
    name = config.algorithm_names[alg_index]
    target = build_target(config.target)
    reference = DiscreteMeasure(ref_atoms, ref_masses)
    init_seed, run_seed = _child_seeds(config.seed, (1, alg_index, particles, repeat))
    try:
        mean = np.zeros(target.dim) if config.init_mean is None else np.asarray(config.init_mean)
        if mean.size != target.dim:
            raise ValueError(f"init.mean has dimension {mean.size}, target has {target.dim}")
        rng = np.random.default_rng(init_seed)
        initial = Ensemble.equal_weights(mean + config.init_std * rng.standard_normal((particles, target.dim)))
        spec = replace(config.algorithm_specs[alg_index], seed=run_seed)
        trace = []
        if config.metric_cadence > 0:
            trace_rows = []

            def tracer(ens):
                trace_rows.append(_metric_values(config, target, reference, ens))
                return 0.0

            record = run(spec, target, initial, metric_hooks={"_": tracer},
                         record_every=config.metric_cadence)
            trace = [(it, trace_rows[k]) for k, (it, _) in enumerate(record.history)]
        else:
            record = run(spec, target, initial)
        values = _metric_values(config, target, reference, record.final)
        return RunResult(
            algorithm=name,
            particles=particles,
            repeat=repeat,
            seed=run_seed,
            wall_time=record.wall_time,
            metrics=values,
            trace=trace,
            final=record.final,
        )
    except Exception as exc:  # noqa: BLE001 - failed runs become error rows
        logger.warning("run %s M=%d rep=%d failed: %s", name, particles, repeat, exc)
        return RunResult(
            algorithm=name,
            particles=particles,
            repeat=repeat,
            seed=run_seed,
            wall_time=0.0,
            metrics={},
            trace=[],
            final=None,
            error=str(exc),
        )


def run_experiment(config, jobs=1):
    """Run every (algorithm, particle count, repeat) combination of a config.

    Individual run failures are recorded as error rows; remaining runs
    proceed. Results are ordered by (algorithm index, particle count, repeat)
    regardless of worker scheduling.
    """
    target = build_target(config.target)
    reference = build_reference(config, target)
    tasks = [
        (ai, m, rep)
        for ai in range(len(config.algorithm_names))
        for m in config.particle_counts
        for rep in range(config.repeats)
    ]
    cap = os.environ.get("DPVI_MAX_JOBS")
    if cap is not None:
        jobs = max(1, min(jobs, int(cap)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_execute_run, config, ai, m, rep, reference.atoms, reference.masses)
                for ai, m, rep in tasks
            ]
            runs = [f.result() for f in futures]
    else:
        runs = [_execute_run(config, ai, m, rep, reference.atoms, reference.masses) for ai, m, rep in tasks]
    return ResultsTable(runs=runs)


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_outputs(table, config, out_dir):
    """Write results.csv, summary.csv, run_meta.json, per-run particle
    snapshots, metric traces when a cadence was set, and optional SVG
    scatters for 2-D targets. Returns the list of written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "particles", "repeat", "seed", "metric", "value", "wall_time", "error"])
        for row in table.metric_rows():
            writer.writerow([_fmt(v) for v in row])
    written.append(results_path)

    # aggregate mean/std per (algorithm, particles, metric)
    groups = {}
    for r in table.runs:
        if r.error is not None:
            continue
        for name, value in r.metrics.items():
            groups.setdefault((r.algorithm, r.particles, name), []).append(value)
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "particles", "metric", "mean", "std", "count"])
        for (alg, m, metric), values in groups.items():
            arr = np.asarray(values)
            writer.writerow([alg, m, metric, _fmt(float(arr.mean())), _fmt(float(arr.std())), len(values)])
    written.append(summary_path)

    import scipy

    meta = {
        "config": _config_echo(config),
        "runs": [
            {"algorithm": r.algorithm, "particles": r.particles, "repeat": r.repeat,
             "seed": r.seed, "error": r.error}
            for r in table.runs
        ],
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__},
    }
    meta_path = os.path.join(out_dir, "run_meta.json")
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)
    written.append(meta_path)

    for r in table.runs:
        if r.final is None:
            continue
        stem = f"{r.algorithm}_{r.particles}_{r.repeat}"
        snap_path = os.path.join(out_dir, f"particles_{stem}.csv")
        with open(snap_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "weight"] + [f"x{k}" for k in range(r.final.dim)])
            for i in range(r.final.size):
                writer.writerow([i, _fmt(float(r.final.weights[i]))] + [_fmt(float(v)) for v in r.final.positions[i]])
        written.append(snap_path)
        if r.trace:
            trace_path = os.path.join(out_dir, f"trace_{stem}.csv")
            with open(trace_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iteration", "metric", "value"])
                for iteration, values in r.trace:
                    for name, value in values.items():
                        writer.writerow([iteration, name, _fmt(value)])
            written.append(trace_path)
        if config.plots:
            svg = _write_scatter(r, config, out_dir, stem)
            if svg:
                written.append(svg)
    return written


def _config_echo(config):
    echo = asdict(config)
    echo["algorithm_specs"] = [
        {**asdict(spec), "family": spec.family.value} for spec in config.algorithm_specs
    ]
    return echo


def _write_scatter(result, config, out_dir, stem):
    if result.final.dim != 2:
        logger.info("scatter plot skipped for %s: target is %d-D, plots need 2-D", stem, result.final.dim)
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    target = build_target(config.target)
    pos = result.final.positions
    w = result.final.weights
    lo = pos.min(axis=0) - 2.0
    hi = pos.max(axis=0) + 2.0
    g0 = np.linspace(lo[0], hi[0], 120)
    g1 = np.linspace(lo[1], hi[1], 120)
    G0, G1 = np.meshgrid(g0, g1)
    dens = target.log_density(np.stack([G0.ravel(), G1.ravel()], axis=1)).reshape(G0.shape)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.contour(G0, G1, np.exp(dens - dens.max()), levels=8, linewidths=0.8, cmap="viridis")
    # marker area proportional to weight -> radius proportional to sqrt(weight)
    ax.scatter(pos[:, 0], pos[:, 1], s=2000.0 * w, alpha=0.7, color="tab:red")
    ax.set_title(stem)
    path = os.path.join(out_dir, f"scatter_{stem}.svg")
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
