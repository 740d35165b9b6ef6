"""Experiment orchestration: JSON configs, staged runs with per-task artifact
directories, density export, and per-round metric reports."""

from __future__ import annotations

import csv
import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .genome import BUILTIN_GENOMES, GenomeSpec, builtin_genome, load_genome, spec_to_dict
from .hic_io import load_map, make_reference, save_map
from .metrics import posterior_metrics
from .rng import make_rng
from .simulator import DEFAULT_NOISE_FRAC, simulate_block_row_batch, simulate_map_batch
from .smc_abc import (
    DEFAULT_ACCEPT_FRAC,
    DEFAULT_N_PER_ROUND,
    DEFAULT_ROUNDS,
    BoxPrior,
    PearsonDistance,
    SummaryDistance,
    run_smc_abc,
)
from .snpe import DEFAULT_K_ATOMS, run_snpe
from .summary import (
    build_joint_net,
    build_shared_net,
    load_summary_net,
    make_block_store,
    make_joint_dataset,
    save_summary_net,
    train_summary,
)

METHODS = ("abc-pearson", "abc-cnn", "snpe")
MODES = ("joint", "per-chromosome")
DENSITY_GRID_POINTS = 512
DEFAULT_N_TRAIN = 2000
DEFAULT_N_POSTERIOR_SAMPLES = 1000

CONFIG_FILE = "config.json"
REFERENCE_DIR = "reference"
SUMMARY_FILE = "summary.ckpt"
REPORT_FILE = "report.csv"
RESULT_FILE = "result.json"
METRICS_FILE = "metrics.json"
DENSITY_FILE = "density.csv"

# rng namespaces: one spawn key prefix per stage, so adding draws to one
# stage never shifts another stage's stream
_NS_REFERENCE = 0
_NS_SUMMARY = 1
_NS_INFERENCE = 2
_NS_EVAL = 3
_NS_THETA_REF = 4


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; earlier artifacts are left on disk."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message

    def __reduce__(self):
        return (StageError, (self.stage, self.message))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (StageError, ConfigError, KeyboardInterrupt):
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


# --- configuration -----------------------------------------------------------

_REFERENCE_DEFAULTS = {
    "kind": "synthetic",
    "theta": "prior",
    "path": None,
    "normalized": False,
    "noise": True,
}

_CONFIG_DEFAULTS = {
    "genome": "s_cerevisiae_3",
    "mode": "joint",
    "method": "abc-pearson",
    "seed": 0,
    "rounds": DEFAULT_ROUNDS,
    "n_per_round": DEFAULT_N_PER_ROUND,
    "accept_frac": DEFAULT_ACCEPT_FRAC,
    "noise_frac": DEFAULT_NOISE_FRAC,
    "n_train": DEFAULT_N_TRAIN,
    "n_posterior_samples": DEFAULT_N_POSTERIOR_SAMPLES,
    "correction": "atomic",
    "k_atoms": DEFAULT_K_ATOMS,
    "jobs": 1,
    "summary_checkpoint": None,
    "train": {},
    "snpe_train": {},
    "reference": {},
    "out": None,
}


def load_config(source, overrides: dict | None = None) -> dict:
    """Resolve a config from a dict or a JSON file path, applying defaults.

    Arguments
    ---------
    source: dict, or path to a JSON object file.
    overrides: optional flat mapping applied on top (CLI flags); None values
        are ignored so unset flags never mask the file.

    Returns
    -------
    dict with every known key present.

    Raises
    ------
    ConfigError on unknown keys, bad values, or a missing output directory.
    """
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    else:
        raw = dict(source)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    unknown = set(raw) - set(_CONFIG_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = {**_CONFIG_DEFAULTS, **raw}

    ref = cfg["reference"]
    if not isinstance(ref, dict):
        raise ConfigError("reference must be an object")
    bad = set(ref) - set(_REFERENCE_DEFAULTS)
    if bad:
        raise ConfigError(f"unknown reference keys: {sorted(bad)}")
    cfg["reference"] = {**_REFERENCE_DEFAULTS, **ref}

    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {cfg['method']!r}")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    if cfg["correction"] not in ("atomic", "none"):
        raise ConfigError(f"correction must be 'atomic' or 'none', got {cfg['correction']!r}")
    for key in ("rounds", "n_per_round", "n_train", "n_posterior_samples", "jobs", "k_atoms"):
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise ConfigError(f"{key} must be a positive integer, got {cfg[key]!r}")
    if not 0 < cfg["accept_frac"] <= 1:
        raise ConfigError(f"accept_frac must be in (0, 1], got {cfg['accept_frac']!r}")
    if cfg["noise_frac"] < 0:
        raise ConfigError(f"noise_frac must be >= 0, got {cfg['noise_frac']!r}")
    if not isinstance(cfg["seed"], int):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")
    if not cfg["out"]:
        raise ConfigError("out (results directory) is required")
    for key in ("train", "snpe_train"):
        if not isinstance(cfg[key], dict):
            raise ConfigError(f"{key} must be an object of trainer keyword overrides")
    ref = cfg["reference"]
    if ref["kind"] not in ("synthetic", "file"):
        raise ConfigError(f"reference.kind must be 'synthetic' or 'file', got {ref['kind']!r}")
    if ref["kind"] == "file" and not ref["path"]:
        raise ConfigError("reference.kind='file' requires reference.path")
    if ref["kind"] == "synthetic" and ref["theta"] != "prior" \
            and not isinstance(ref["theta"], (list, tuple)):
        raise ConfigError("reference.theta must be 'prior' or a list of positions (bp)")


def resolve_genome(name: str) -> GenomeSpec:
    """Builtin genome name, or path to a genome JSON file."""
    if name in BUILTIN_GENOMES:
        return builtin_genome(name)
    if os.path.exists(name):
        return load_genome(name)
    raise ConfigError(f"genome {name!r} is neither builtin {BUILTIN_GENOMES} nor a file")


def _stage_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonify(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- densities ---------------------------------------------------------------


def density_grids(spec: GenomeSpec, chroms, n: int = DENSITY_GRID_POINTS):
    """One evaluation grid per chromosome, spanning its prior support."""
    return [np.linspace(1.0, spec.lengths[i] - 1.0, n) for i in chroms]


def _silverman_bandwidth(x: np.ndarray, w: np.ndarray) -> float:
    """Silverman's rule with the Kish effective sample size for weighted data."""
    n_eff = 1.0 / float(w @ w)
    mu = float(w @ x)
    sd = float(np.sqrt(w @ ((x - mu) ** 2)))
    q25, q75 = np.quantile(x, [0.25, 0.75], weights=w, method="inverted_cdf")
    iqr = float(q75 - q25)
    a = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * a * n_eff ** (-0.2)


def export_density(samples, weights, grids, chunk: int = 4096) -> list[np.ndarray]:
    """Weighted Gaussian KDE per dimension, evaluated on the given grids.

    Kernel mass is reflected at both grid ends so the density keeps
    integrating to one near the support boundary; the bandwidth is
    Silverman's rule floored at two grid steps (degenerate samples would
    otherwise collapse it to zero).

    Returns
    -------
    list of densities, one array per column of samples, aligned with grids.
    """
    s = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if s.shape[0] == 1 and s.shape[1] != len(grids):
        s = s.T
    assert s.shape[1] == len(grids), "one grid per sample dimension"
    if weights is None:
        w = np.full(s.shape[0], 1.0 / s.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
    out = []
    for d, grid in enumerate(grids):
        grid = np.asarray(grid, dtype=np.float64)
        lo, hi = grid[0], grid[-1]
        step = (hi - lo) / (grid.size - 1)
        h = max(_silverman_bandwidth(s[:, d], w), 2.0 * step)
        # source points plus their reflections across both boundaries
        pts = np.concatenate([s[:, d], 2.0 * lo - s[:, d], 2.0 * hi - s[:, d]])
        pw = np.concatenate([w, w, w])
        dens = np.zeros(grid.size)
        for start in range(0, pts.size, chunk):
            z = (grid[:, None] - pts[None, start:start + chunk]) / h
            dens += np.exp(-0.5 * z * z) @ pw[start:start + chunk]
        out.append(dens / (h * np.sqrt(2.0 * np.pi)))
    return out


def _write_density(path, names, grids, densities) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chromosome", "position_bp", "density"])
        for name, grid, dens in zip(names, grids, densities):
            for x, y in zip(grid, dens):
                writer.writerow([name, f"{x:.17g}", f"{y:.17g}"])


# --- stages ------------------------------------------------------------------


def _prepare_reference(spec: GenomeSpec, cfg: dict, out_dir: str):
    """Build or load the reference map and persist it under the run directory."""
    ref = cfg["reference"]
    dest = os.path.join(out_dir, REFERENCE_DIR)
    if ref["kind"] == "file":
        loaded = load_map(ref["path"])
        if loaded.spec.digest() != spec.digest():
            raise ConfigError(
                f"reference map genome does not match config genome ({ref['path']})")
        theta_ref = loaded.meta.get("theta_ref")
        save_map(dest, spec, loaded.cmap, theta_ref=theta_ref,
                 seed=loaded.meta.get("seed"),
                 normalized=bool(loaded.meta.get("normalized", False)))
        return loaded.cmap, theta_ref

    if ref["theta"] == "prior":
        lows, highs = spec.prior_bounds()
        theta_ref = make_rng(_stage_seed(cfg["seed"], _NS_THETA_REF)).uniform(lows, highs)
    else:
        theta_ref = np.asarray(ref["theta"], dtype=np.float64)
        if theta_ref.shape != (spec.n_chrom,):
            raise ConfigError(
                f"reference.theta needs {spec.n_chrom} positions, got {theta_ref.size}")
        lows, highs = spec.prior_bounds()
        if not np.all((theta_ref >= lows) & (theta_ref <= highs)):
            raise ConfigError("reference.theta lies outside the prior support")
    ref_seed = int(_stage_seed(cfg["seed"], _NS_REFERENCE).generate_state(1)[0])
    mode = "normalized" if ref["normalized"] else "raw"
    cmap, _ = make_reference(spec, theta_ref, ref_seed, mode=mode,
                             noise=ref["noise"], noise_frac=cfg["noise_frac"])
    save_map(dest, spec, cmap, theta_ref=theta_ref, seed=ref_seed,
             normalized=ref["normalized"], extra={"noise_frac": cfg["noise_frac"]})
    return cmap, [float(t) for t in theta_ref]


def train_summary_checkpoint(spec: GenomeSpec, mode: str, n_train: int, seed: int,
                             dest, noise_frac: float = DEFAULT_NOISE_FRAC,
                             train_kwargs: dict | None = None):
    """Simulate a training set, fit the summary net for `mode`, and save it.

    The rng stream is derived from (seed, summary-stage namespace), so the
    same seed inside a full experiment yields the same checkpoint.
    """
    rng = make_rng(_stage_seed(seed, _NS_SUMMARY))
    if mode == "joint":
        net = build_joint_net(spec, rng)
        inputs, thetas = make_joint_dataset(spec, n_train, rng, noise_frac=noise_frac)
    else:
        net = build_shared_net(spec, rng)
        inputs, thetas = make_block_store(spec, n_train, rng, noise_frac=noise_frac)
    history = train_summary(net, inputs, thetas, rng, **(train_kwargs or {}))
    save_summary_net(net, dest, extra={
        "n_train": n_train,
        "best_epoch": history["best_epoch"],
        "epochs_run": len(history["train_loss"]),
    })
    return net


def _prepare_summary_net(spec: GenomeSpec, cfg: dict, out_dir: str):
    """Train the summary net for the configured mode, or copy a checkpoint in.

    Either way the net used by the run ends up at <out>/summary.ckpt so task
    workers (possibly separate processes) read one canonical artifact.
    """
    dest = os.path.join(out_dir, SUMMARY_FILE)
    if cfg["summary_checkpoint"]:
        net, header = load_summary_net(cfg["summary_checkpoint"])
        if header["genome_digest"] != spec.digest():
            raise ConfigError("summary checkpoint was trained on a different genome")
        if header["mode"] != cfg["mode"]:
            raise ConfigError(
                f"summary checkpoint mode {header['mode']!r} does not match run mode")
        shutil.copyfile(cfg["summary_checkpoint"], dest)
        return net
    return train_summary_checkpoint(spec, cfg["mode"], cfg["n_train"], cfg["seed"],
                                    dest, noise_frac=cfg["noise_frac"],
                                    train_kwargs=cfg["train"])


def _task_name(spec: GenomeSpec, task: int | None) -> str:
    return "joint" if task is None else spec.names[task]


def _sample_columns(names, with_distance: bool) -> list[str]:
    cols = [f"theta_{n}" for n in names] + ["weight"]
    if with_distance:
        cols.append("distance")
    return cols


def _write_samples(path, names, samples, weights, distances=None) -> None:
    cols = [np.atleast_2d(np.asarray(samples, dtype=np.float64))]
    cols.append(np.asarray(weights, dtype=np.float64)[:, None])
    if distances is not None:
        cols.append(np.asarray(distances, dtype=np.float64)[:, None])
    table = np.hstack(cols)
    header = ",".join(_sample_columns(names, distances is not None))
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="")


def _round_entry(t, samples, weights, theta_ref, epsilon=None) -> dict:
    entry = {"round": t, "epsilon": None if epsilon is None else float(epsilon)}
    if theta_ref is None:
        entry.update({"n_samples": int(np.atleast_2d(samples).shape[0]),
                      "euclidean_mean": None, "w2": None, "mmd": None,
                      "per_dim_abs_error": None})
    else:
        entry.update(posterior_metrics(samples, theta_ref, weights))
    return entry


def run_task(out_dir, task: int | None) -> dict:
    """Run inference plus evaluation for one task of a prepared run directory.

    The run directory must already hold config.json and reference/, plus
    summary.ckpt when the method needs one; everything is re-read from disk
    so the task can execute in a separate process. Returns the metrics
    payload that is also written to the task directory.
    """
    cfg = load_config(os.path.join(out_dir, CONFIG_FILE))
    loaded = load_map(os.path.join(out_dir, REFERENCE_DIR))
    spec = loaded.spec
    theta_full = loaded.meta.get("theta_ref")

    name = _task_name(spec, task)
    tdir = os.path.join(out_dir, f"task_{name}")
    os.makedirs(tdir, exist_ok=True)

    joint = task is None
    idx = 0 if joint else task
    names = list(spec.names) if joint else [spec.names[task]]
    theta_ref = None if theta_full is None else \
        (np.asarray(theta_full, dtype=np.float64) if joint
         else np.asarray([theta_full[task]], dtype=np.float64))
    prior = BoxPrior.from_spec(spec, chrom=task)
    nf = cfg["noise_frac"]

    # per-chromosome tasks see only their own row of reference blocks
    ref_obj = loaded.cmap if joint else loaded.cmap.row(task)
    if joint:
        def simulate(thetas, rngs):
            return simulate_map_batch(spec, thetas, rngs, noise_frac=nf)
    else:
        def simulate(thetas, rngs):
            return simulate_block_row_batch(spec, task, thetas[:, 0], rngs, noise_frac=nf)

    net = None
    if cfg["method"] in ("abc-cnn", "snpe"):
        net, _ = load_summary_net(os.path.join(out_dir, SUMMARY_FILE))

    rng = make_rng(_stage_seed(cfg["seed"], _NS_INFERENCE, idx))
    rounds = []
    final = None  # (samples, weights) of the last round, for the density export

    if cfg["method"] == "snpe":
        def summarize(sims):
            s = net.summarize_scaled(sims) if joint \
                else net.summarize_scaled(sims, chrom=task)
            return np.atleast_2d(np.asarray(s, dtype=np.float64))

        ref_context = np.atleast_1d(
            net.summarize_scaled(ref_obj) if joint
            else net.summarize_scaled(ref_obj, chrom=task))
        estimates = _stage("inference", run_snpe, prior, simulate, summarize,
                           ref_context, rng, n_rounds=cfg["rounds"],
                           n_per_round=cfg["n_per_round"],
                           correction=cfg["correction"], k_atoms=cfg["k_atoms"],
                           train_kwargs=cfg["snpe_train"])
        n_post = cfg["n_posterior_samples"]
        for est in estimates:
            eval_rng = make_rng(_stage_seed(cfg["seed"], _NS_EVAL, idx, est.t))
            samples = _stage("evaluate", est.sample, n_post, eval_rng, prior=prior)
            weights = np.full(n_post, 1.0 / n_post)
            _write_samples(os.path.join(tdir, f"samples_round_{est.t:02d}.csv"),
                           names, samples, weights)
            rounds.append(_round_entry(est.t, samples, weights, theta_ref))
            final = (samples, weights)
    else:
        distance = PearsonDistance(ref_obj) if cfg["method"] == "abc-pearson" \
            else SummaryDistance(net, ref_obj, chrom=task)
        populations = _stage("inference", run_smc_abc, prior, simulate, distance,
                             rng, n_rounds=cfg["rounds"],
                             n_per_round=cfg["n_per_round"],
                             accept_frac=cfg["accept_frac"],
                             sigma=float(spec.resolution_bp))
        for pop in populations:
            t = pop.t + 1
            _write_samples(os.path.join(tdir, f"samples_round_{t:02d}.csv"),
                           names, pop.particles, pop.weights, pop.distances)
            rounds.append(_round_entry(t, pop.particles, pop.weights, theta_ref,
                                       epsilon=pop.epsilon))
            final = (pop.particles, pop.weights)

    chroms = list(range(spec.n_chrom)) if joint else [task]
    grids = density_grids(spec, chroms)
    densities = _stage("evaluate", export_density, final[0], final[1], grids)
    _write_density(os.path.join(tdir, DENSITY_FILE), names, grids, densities)

    payload = {
        "task": name,
        "method": cfg["method"],
        "mode": cfg["mode"],
        "chromosomes": names,
        "resolution_bp": spec.resolution_bp,
        "theta_ref": None if theta_ref is None else [float(t) for t in theta_ref],
        "rounds": rounds,
    }
    _write_json(os.path.join(tdir, METRICS_FILE), payload)
    return payload


# --- reports -----------------------------------------------------------------


def round_report(task_metrics: list[dict], names) -> tuple[list[str], list[list]]:
    """Flatten per-task metrics payloads into one row per (task, round).

    Arguments
    ---------
    task_metrics: metrics payloads as produced by run_task.
    names: genome chromosome names; fixes one error column per chromosome
        (blank where a task does not estimate that dimension).

    Returns
    -------
    (header, rows) ready for csv.writer.
    """
    header = ["round", "method", "task", "n_samples", "epsilon",
              "euclidean_mean", "mmd", "w2", "resolution_bp"]
    header += [f"err_{n}" for n in names]
    rows = []
    for payload in task_metrics:
        errs_at = {n: k for k, n in enumerate(payload["chromosomes"])}
        for entry in payload["rounds"]:
            row = [entry["round"], payload["method"], payload["task"],
                   entry["n_samples"], entry["epsilon"],
                   entry["euclidean_mean"], entry["mmd"], entry["w2"],
                   payload["resolution_bp"]]
            per_dim = entry["per_dim_abs_error"]
            for n in names:
                if per_dim is None or n not in errs_at:
                    row.append(None)
                else:
                    row.append(per_dim[errs_at[n]])
            rows.append(row)
    return header, rows


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_report(path, task_metrics: list[dict], names) -> None:
    header, rows = round_report(task_metrics, names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


# --- the experiment ----------------------------------------------------------


def run_experiment(config, overrides: dict | None = None) -> dict:
    """Execute a full experiment from a config dict or JSON path.

    Stages: resolve config, build/load the reference, train or load the
    summary net (CNN methods only), run one inference task (joint mode) or
    one per chromosome (per-chromosome mode), evaluate each round, then merge
    the per-task metrics into report.csv and result.json. Any stage failure
    raises StageError carrying the stage name; artifacts written before the
    failure stay on disk.

    Returns
    -------
    The result bundle also written to <out>/result.json.
    """
    cfg = _stage("config", load_config, config, overrides)
    spec = _stage("config", resolve_genome, cfg["genome"])
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, CONFIG_FILE), cfg)

    _stage("reference", _prepare_reference, spec, cfg, out_dir)
    if cfg["method"] in ("abc-cnn", "snpe"):
        _stage("summary", _prepare_summary_net, spec, cfg, out_dir)

    tasks = [None] if cfg["mode"] == "joint" else list(range(spec.n_chrom))
    if cfg["jobs"] > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            futures = [pool.submit(run_task, out_dir, t) for t in tasks]
            task_metrics = [_stage("inference", f.result) for f in futures]
    else:
        task_metrics = [_stage("inference", run_task, out_dir, t) for t in tasks]

    _stage("report", write_report, os.path.join(out_dir, REPORT_FILE),
           task_metrics, spec.names)
    result = {
        "genome": spec_to_dict(spec),
        "genome_digest": spec.digest(),
        "resolution_bp": spec.resolution_bp,
        "method": cfg["method"],
        "mode": cfg["mode"],
        "seed": cfg["seed"],
        "rounds": cfg["rounds"],
        "tasks": {m["task"]: {"rounds": len(m["rounds"]), "final": m["rounds"][-1]}
                  for m in task_metrics},
    }
    _stage("report", _write_json, os.path.join(out_dir, RESULT_FILE), result)
    return result


# --- recomputation (evaluate subcommand) --------------------------------------


def _read_samples(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_theta = sum(1 for c in header if c.startswith("theta_"))
    # contiguous copy: BLAS reductions on a strided slice can differ from the
    # original computation in the last ulp, breaking exact recomputation
    samples = np.ascontiguousarray(table[:, :n_theta])
    weights = table[:, n_theta].copy()
    return samples, weights


def evaluate_run(out_dir) -> dict:
    """Recompute every round's metrics from the exported sample files and
    compare against the stored metrics.json payloads.

    Returns
    -------
    dict with per-task recomputed rounds and the maximum absolute
    discrepancy across all numeric metric fields.
    """
    tasks = sorted(d for d in os.listdir(out_dir) if d.startswith("task_"))
    if not tasks:
        raise FileNotFoundError(f"no task directories under {out_dir}")
    report = {"tasks": {}, "max_abs_diff": 0.0}
    for tname in tasks:
        tdir = os.path.join(out_dir, tname)
        with open(os.path.join(tdir, METRICS_FILE)) as fh:
            stored = json.load(fh)
        theta_ref = stored["theta_ref"]
        recomputed = []
        for entry in stored["rounds"]:
            path = os.path.join(tdir, f"samples_round_{entry['round']:02d}.csv")
            samples, weights = _read_samples(path)
            fresh = _round_entry(entry["round"], samples, weights,
                                 None if theta_ref is None else np.asarray(theta_ref),
                                 epsilon=entry["epsilon"])
            recomputed.append(fresh)
            for key in ("euclidean_mean", "w2", "mmd"):
                if entry[key] is not None:
                    diff = abs(entry[key] - fresh[key])
                    report["max_abs_diff"] = max(report["max_abs_diff"], diff)
            if entry["per_dim_abs_error"] is not None:
                diff = np.max(np.abs(np.asarray(entry["per_dim_abs_error"])
                                     - np.asarray(fresh["per_dim_abs_error"])))
                report["max_abs_diff"] = max(report["max_abs_diff"], float(diff))
        report["tasks"][stored["task"]] = {"rounds": recomputed,
                                           "final": recomputed[-1]}
    return report
