"""Command line entry points: simulation, reference building, normalization,
summary training, inference experiments, and report export."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import pipeline
from .hic_io import load_map, make_reference, normalize_map, save_map
from .rng import make_rng
from .simulator import DEFAULT_NOISE_FRAC, SimParams, simulate_map

SEED_ENV = "CENTROSIM_SEED"


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise pipeline.ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}")


def _seed_of(args) -> int:
    return _env_seed() if args.seed is None else args.seed


def _parse_theta(text: str, spec):
    """'prior', a comma list of positions (bp), or @file with a JSON list."""
    if text == "prior":
        lows, highs = spec.prior_bounds()
        return None, (lows, highs)
    if text.startswith("@"):
        with open(text[1:]) as fh:
            vals = json.load(fh)
    else:
        try:
            vals = [float(x) for x in text.split(",")]
        except ValueError:
            raise pipeline.ConfigError(f"cannot parse theta {text!r}")
    theta = np.asarray(vals, dtype=np.float64)
    if theta.shape != (spec.n_chrom,):
        raise pipeline.ConfigError(
            f"theta needs {spec.n_chrom} positions, got {theta.size}")
    return theta, None


def _resolve_theta(text: str, spec, seed: int) -> np.ndarray:
    theta, bounds = _parse_theta(text, spec)
    if theta is None:
        rng = make_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4,)))
        theta = rng.uniform(*bounds)
    return theta


def _cmd_simulate(args) -> int:
    spec = pipeline.resolve_genome(args.genome)
    seed = _seed_of(args)
    theta = _resolve_theta(args.theta, spec, seed)
    params = None
    if args.sigma2 is not None or args.alpha is not None:
        if args.sigma2 is None or args.alpha is None:
            raise pipeline.ConfigError("--sigma2 and --alpha must be given together")
        params = SimParams(sigma2=args.sigma2, alpha=args.alpha,
                           noise_frac=args.noise_frac)
    cmap = simulate_map(spec, theta, make_rng(seed), params=params,
                        noise=not args.no_noise)
    save_map(args.out, spec, cmap, theta_ref=theta, seed=seed,
             extra={"noise_frac": args.noise_frac})
    print(f"wrote simulated map to {args.out}")
    return 0


def _cmd_make_reference(args) -> int:
    spec = pipeline.resolve_genome(args.genome)
    seed = _seed_of(args)
    theta = _resolve_theta(args.theta, spec, seed)
    mode = "normalized" if args.normalized else "raw"
    cmap, _ = make_reference(spec, theta, seed, mode=mode,
                             noise=not args.no_noise, noise_frac=args.noise_frac)
    save_map(args.out, spec, cmap, theta_ref=theta, seed=seed,
             normalized=args.normalized, extra={"noise_frac": args.noise_frac})
    print(f"wrote reference map to {args.out}")
    return 0


def _cmd_normalize(args) -> int:
    loaded = load_map(args.input)
    balanced, _, info = normalize_map(loaded.spec, loaded.cmap,
                                      tol=args.tol, max_iter=args.max_iter)
    save_map(args.out, loaded.spec, balanced,
             theta_ref=loaded.meta.get("theta_ref"), seed=loaded.meta.get("seed"),
             normalized=True, extra={"ice": info})
    status = "converged" if info["converged"] else "did not converge"
    print(f"ICE {status} after {info['n_iter']} iterations; wrote {args.out}")
    return 0


def _cmd_train_summary(args) -> int:
    spec = pipeline.resolve_genome(args.genome)
    seed = _seed_of(args)
    train_kwargs = {k: v for k, v in [("epochs", args.epochs),
                                      ("batch_size", args.batch_size),
                                      ("lr", args.lr),
                                      ("patience", args.patience)] if v is not None}
    pipeline.train_summary_checkpoint(spec, args.mode, args.n_train, seed,
                                      args.out, noise_frac=args.noise_frac,
                                      train_kwargs=train_kwargs)
    print(f"wrote summary checkpoint to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise pipeline.ConfigError(f"cannot read config {args.config}: {exc}")
        if not isinstance(raw, dict):
            raise pipeline.ConfigError("config must be a JSON object")
    else:
        raw = {}
    if args.reference_path or args.theta:
        ref = dict(raw.get("reference", {}))
        if args.reference_path:
            ref.update(kind="file", path=args.reference_path)
        if args.theta:
            ref.update(kind="synthetic", theta="prior" if args.theta == "prior"
                       else [float(x) for x in args.theta.split(",")])
        raw["reference"] = ref
    if args.seed is None and "seed" not in raw and os.environ.get(SEED_ENV):
        raw["seed"] = _env_seed()
    overrides = {
        "genome": args.genome, "mode": args.mode, "method": args.method,
        "seed": args.seed, "rounds": args.rounds, "n_per_round": args.n_per_round,
        "accept_frac": args.accept_frac, "noise_frac": args.noise_frac,
        "n_train": args.n_train, "n_posterior_samples": args.n_posterior_samples,
        "correction": args.correction, "jobs": args.jobs,
        "summary_checkpoint": args.summary_checkpoint, "out": args.out,
    }
    started = time.monotonic()
    result = pipeline.run_experiment(raw, overrides)
    elapsed = time.monotonic() - started
    for name, task in sorted(result["tasks"].items()):
        final = task["final"]
        if final["euclidean_mean"] is None:
            print(f"{name}: {task['rounds']} rounds (no reference positions; "
                  "metrics skipped)")
        else:
            print(f"{name}: {task['rounds']} rounds, final mean distance "
                  f"{final['euclidean_mean']:.1f} bp")
    print(f"done in {elapsed:.1f}s (artifacts exclude runtime)", file=sys.stderr)
    return 0


def _cmd_evaluate(args) -> int:
    report = pipeline.evaluate_run(args.run)
    json.dump(pipeline._jsonify(report), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if report["max_abs_diff"] > args.tol:
        print(f"recomputed metrics deviate by {report['max_abs_diff']:.3e} "
              f"(tolerance {args.tol:g})", file=sys.stderr)
        return 3
    return 0


def _cmd_report(args) -> int:
    payloads = []
    digest = None
    names = None
    for run in args.run:
        with open(os.path.join(run, pipeline.RESULT_FILE)) as fh:
            result = json.load(fh)
        if digest is None:
            digest = result["genome_digest"]
            names = [c["name"] for c in result["genome"]["chromosomes"]]
        elif result["genome_digest"] != digest:
            raise pipeline.ConfigError("cannot merge reports across genomes")
        for tdir in sorted(d for d in os.listdir(run) if d.startswith("task_")):
            with open(os.path.join(run, tdir, pipeline.METRICS_FILE)) as fh:
                payloads.append(json.load(fh))
    if args.out:
        pipeline.write_report(args.out, payloads, names)
        print(f"wrote {args.out}")
    else:
        header, rows = pipeline.round_report(payloads, names)
        print(",".join(header))
        for row in rows:
            print(",".join(pipeline._format_cell(v) for v in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="centrosim",
        description="Centromere inference from trans-contact maps.",
        epilog=f"Default seed comes from ${SEED_ENV} when --seed is not given.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help=f"rng seed (default: ${SEED_ENV} or 0)")

    p = sub.add_parser("simulate", help="simulate one contact map and save it")
    p.add_argument("--genome", required=True, help="builtin genome name or JSON path")
    p.add_argument("--theta", required=True,
                   help="'prior', comma-separated positions (bp), or @file.json")
    p.add_argument("--out", required=True, help="output map directory")
    add_seed(p)
    p.add_argument("--sigma2", type=float, default=None, help="fix the peak width")
    p.add_argument("--alpha", type=float, default=None, help="fix the peak intensity")
    p.add_argument("--noise-frac", type=float, default=DEFAULT_NOISE_FRAC)
    p.add_argument("--no-noise", action="store_true", help="skip additive noise")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("make-reference", help="build a reference map for inference")
    p.add_argument("--genome", required=True)
    p.add_argument("--theta", required=True)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.add_argument("--normalized", action="store_true", help="ICE-balance the map")
    p.add_argument("--noise-frac", type=float, default=DEFAULT_NOISE_FRAC)
    p.add_argument("--no-noise", action="store_true")
    p.set_defaults(func=_cmd_make_reference)

    p = sub.add_parser("normalize", help="ICE-balance a saved map")
    p.add_argument("--in", dest="input", required=True, help="input map directory")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("train-summary", help="train a summary net checkpoint")
    p.add_argument("--genome", required=True)
    p.add_argument("--mode", choices=pipeline.MODES, default="joint")
    p.add_argument("--n-train", type=int, default=pipeline.DEFAULT_N_TRAIN)
    p.add_argument("--out", required=True, help="checkpoint path")
    add_seed(p)
    p.add_argument("--noise-frac", type=float, default=DEFAULT_NOISE_FRAC)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.set_defaults(func=_cmd_train_summary)

    p = sub.add_parser("infer", help="run a full inference experiment")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", default=None, help="results directory")
    p.add_argument("--genome", default=None)
    p.add_argument("--mode", choices=pipeline.MODES, default=None)
    p.add_argument("--method", choices=pipeline.METHODS, default=None)
    add_seed(p)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--n-per-round", type=int, default=None)
    p.add_argument("--accept-frac", type=float, default=None)
    p.add_argument("--noise-frac", type=float, default=None)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-posterior-samples", type=int, default=None)
    p.add_argument("--correction", choices=("atomic", "none"), default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel task workers")
    p.add_argument("--summary-checkpoint", default=None)
    p.add_argument("--reference-path", default=None,
                   help="use a saved map directory as the reference")
    p.add_argument("--theta", default=None,
                   help="synthetic reference positions ('prior' or comma list)")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="recompute metrics from exported samples")
    p.add_argument("--run", required=True, help="results directory")
    p.add_argument("--tol", type=float, default=1e-9,
                   help="largest allowed recomputation discrepancy")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="merge runs into one per-round CSV")
    p.add_argument("--run", nargs="+", required=True, help="results directories")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # unexpected: still a runtime failure, not a crash
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
