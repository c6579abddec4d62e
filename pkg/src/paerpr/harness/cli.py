"""Command-line entry point: ``paerpr <command> [options]``.

Exit status is 0 when every acceptance property the command checks passes,
1 when one fails and 2 on usage or input errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import benchmark_inference
from .checkpoint import CheckpointError, save_checkpoint
from .config import ExperimentConfig, stable_hash
from .dataio import export_benchmark
from .metrics import evaluate_poses
from .pipeline import CACHE_ENV, Pipeline
from .suites import (
    SUITES,
    Criterion,
    apr_poses,
    distillation_criterion,
    improvement_check,
    refinement_trace,
    run_experiment_suite,
    write_csv,
)

log = logging.getLogger("paerpr")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. schedule.tf.epochs=5 (repeatable)")
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    p.add_argument("--cache", type=Path, help=f"checkpoint cache directory (default: ${CACHE_ENV})")
    p.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="restrict to this seed (repeatable; default: config seeds)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paerpr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("gen-scenes", help="generate and export the synthetic benchmark"))
    for name in ("train-apr", "train-pae"):
        p = sub.add_parser(name, help=f"train (or load from cache) the {name[6:].upper()}")
        _common(p)
        p.add_argument("--k", type=float, default=100, help="training subset percentage")
    p = sub.add_parser("train-rpr", help="train a relative pose regressor")
    _common(p)
    p.add_argument("--kind", choices=("img", "pae", "tf"), required=True)
    p.add_argument("--k", type=float, default=100)
    p.add_argument("--depth", type=int, help="transformer encoder layers (default: config)")
    _common(sub.add_parser("eval", help="APR teacher vs PAE-decoded poses"))
    p = sub.add_parser("refine-eval", help="APR baseline vs transformer refinement")
    _common(p)
    p.add_argument("--iters", type=int, default=1)
    p.add_argument("--reference", choices=("estimate", "nearest"), default="estimate")
    p = sub.add_parser("suite", help="run an experiment suite")
    _common(p)
    p.add_argument("--name", choices=SUITES, required=True)
    p = sub.add_parser("bench", help="single-query refinement latency")
    _common(p)
    p.add_argument("--n", type=int, default=100, help="number of timed queries")
    return parser


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.overrides:
        config = config.with_overrides(args.overrides)
    if args.seeds:
        config = config.replace(seeds=tuple(args.seeds), seed=args.seeds[0])
    return config


def _report(criteria: list[Criterion]) -> int:
    for c in criteria:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} {json.dumps(c.detail, default=float)}")
    return 0 if all(c.passed for c in criteria) else 1


def _write_summary(out: Path, name: str, criteria: list[Criterion]) -> None:
    summary = {"command": name, "passed": all(c.passed for c in criteria),
               "criteria": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in criteria]}
    (out / f"{name}_summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        config = load_config(args)
        out = Path(args.out or config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
        return _dispatch(args, config, out)
    except (CheckpointError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args, config: ExperimentConfig, out: Path) -> int:
    pipe = Pipeline(config, args.cache)
    h = stable_hash(config)
    cmd = args.command
    if cmd == "gen-scenes":
        for seed in config.seeds:
            path = export_benchmark(pipe.benchmark(seed), out / f"seed{seed}",
                                    {"seed": seed, "config_hash": h})
            print(path)
        return 0
    if cmd in ("train-apr", "train-pae", "train-rpr"):
        for seed in config.seeds:
            if cmd == "train-apr":
                model, name = pipe.apr(seed, args.k), "apr"
            elif cmd == "train-pae":
                model, name = pipe.pae(seed, args.k), "pae"
            else:
                model, name = pipe.rpr(args.kind, seed, args.k, args.depth), f"rpr_{args.kind}"
            size = save_checkpoint(model, out / f"{name}-seed{seed}-k{args.k:g}.ckpt")
            print(f"{name} seed={seed} k={args.k:g} bytes={size}")
        for rec in pipe.trained:
            print(f"trained {rec['kind']} {rec['key']} loss {rec['initial_loss']:.4f} -> {rec['epoch_loss'][-1]:.4f}")
        return 0
    if cmd == "eval":
        from .suites import distillation_report

        rows = []
        for seed in config.seeds:
            teacher, decoded = distillation_report(pipe, seed)
            for label, r in (("apr", teacher), ("pae_decoded", decoded)):
                for s in sorted(r.scene_median_position):
                    rows.append([h, seed, label, s, r.scene_median_position[s], r.scene_median_orientation[s]])
                rows.append([h, seed, label, "mean", r.median_position, r.median_orientation])
        write_csv(out / "eval.csv", ["config_hash", "seed", "method", "scene", "median_position",
                                     "median_orientation"], rows)
        criteria = [distillation_criterion(pipe, config.seeds)]
        _write_summary(out, "eval", criteria)
        return _report(criteria)
    if cmd == "refine-eval":
        reference = "apr_estimate" if args.reference == "estimate" else "nearest_training_pose"
        rows, base, refined = [], {}, {}
        for seed in config.seeds:
            test = pipe.benchmark(seed).test
            b = evaluate_poses(*apr_poses(pipe, seed), test)
            xs, qs = refinement_trace(pipe, seed, args.iters, reference)
            base[seed] = (b.median_position, b.median_orientation)
            rows.append([h, seed, "apr", 0, *base[seed]])
            for i in range(1, args.iters + 1):
                r = evaluate_poses(xs[i], qs[i], test)
                rows.append([h, seed, args.reference, i, r.median_position, r.median_orientation])
            refined[seed] = (r.median_position, r.median_orientation)
        write_csv(out / "refine_eval.csv", ["config_hash", "seed", "method", "iterations", "median_position",
                                            "median_orientation"], rows)
        criteria = [improvement_check(f"refined_i{args.iters}_{args.reference}_le_baseline", base, refined)]
        _write_summary(out, "refine_eval", criteria)
        return _report(criteria)
    if cmd == "suite":
        result = run_experiment_suite(args.name, config, out, pipeline=pipe)
        for p in result.csv_files:
            print(p)
        return _report(result.criteria)
    if cmd == "bench":
        rows = []
        for seed in config.seeds:
            test = pipe.benchmark(seed).test
            res = benchmark_inference(pipe.apr(seed), pipe.rpr("tf", seed), pipe.test_observations(seed),
                                      test.scene_index, args.n, out / f"rpr_tf-seed{seed}.ckpt")
            rows.append([seed, *res.as_row().values()])
            print(json.dumps({"seed": seed, **res.as_row()}))
        write_csv(out / "bench.csv", ["seed", "queries", "mean_ms", "p50_ms", "p95_ms", "apr_ms", "model_bytes"],
                  rows)
        return 0
    raise ValueError(f"unknown command {cmd}")


if __name__ == "__main__":
    sys.exit(main())
