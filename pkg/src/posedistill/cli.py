"""Command-line interface.

Subcommands: gen-data, train-teacher, build-cache, distill, evaluate,
ablate, capacity. ``--config`` points at a JSON file mirroring
DistillConfig; ``--seed`` and ``--out-dir`` are accepted everywhere they
make sense. Exit codes: 0 ok, 2 config error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .config import DistillConfig, GeneratorConfig, load_config
from .data import (
    NoiseSpec,
    build_teacher_cache,
    export_error_distribution,
    format_float,
    generate_synthetic,
    load_cache,
    load_dataset,
    load_kitti_poses,
    save_cache,
    save_dataset,
)
from .errors import ConfigError, DataError, DivergenceError
from .geometry import ate, relative_deltas, rpe
from .models import load_checkpoint, save_checkpoint
from .pipeline import (
    evaluate_model,
    report_capacity,
    run_ablation,
    run_distill,
    train_teacher,
)

log = logging.getLogger("posedistill")


def _load_config_arg(args) -> DistillConfig:
    config = load_config(args.config) if args.config else DistillConfig()
    if getattr(args, "seed", None) is not None:
        config = config.replace(seeds=(args.seed,))
    return config


def _cmd_gen_data(args) -> int:
    if args.config:
        gen = load_config(args.config).generator
    else:
        gen = GeneratorConfig()
    overrides = {}
    for name in ("num_train", "num_val", "num_test", "length", "feature_dim"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    noise = gen.noise
    noise_over = {}
    for src, dst in (("noise_base", "base"), ("noise_outlier_prob", "outlier_prob"),
                     ("noise_outlier_scale", "outlier_scale")):
        value = getattr(args, src)
        if value is not None:
            noise_over[dst] = value
    if noise_over:
        overrides["noise"] = NoiseSpec(**{**noise.to_dict(), **noise_over})
    seed = args.seed if args.seed is not None else gen.seed
    gen = dataclasses.replace(gen, seed=seed, **overrides)
    dataset = generate_synthetic(
        gen.seed, gen.num_train, gen.num_val, gen.num_test,
        gen.length, gen.feature_dim, gen.noise,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "dataset.txt")
    save_dataset(dataset, path)
    n = sum(len(s) for s in dataset.sequences)
    log.info("wrote %s (%d sequences, %d samples)", path, len(dataset.sequences), n)
    return 0


def _cmd_train_teacher(args) -> int:
    config = _load_config_arg(args)
    dataset = load_dataset(args.data)
    seed = args.seed if args.seed is not None else config.seeds[0]
    teacher, history = train_teacher(config, dataset, seed)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "teacher.npz")
    save_checkpoint(teacher, out)
    with open(os.path.join(args.out_dir, "teacher_history.json"), "w") as f:
        json.dump({"seed": seed, "history": history,
                   "resolved_config": config.to_dict()}, f, indent=2, sort_keys=True)
    final = history[-1]
    log.info("teacher done: val rpe_t=%.5f rpe_r=%.5f -> %s",
             final["rpe_t"], final["rpe_r"], out)
    return 0


def _cmd_build_cache(args) -> int:
    dataset = load_dataset(args.data)
    teacher = load_checkpoint(args.teacher)
    cache = build_teacher_cache(teacher, dataset)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "cache.npz")
    save_cache(cache, out)
    hist = os.path.join(args.out_dir, "teacher_error_histogram.csv")
    export_error_distribution(cache, hist)
    log.info("cache: eta_t=%.6g eta_r=%.6g -> %s (+ %s)",
             cache.eta_t, cache.eta_r, out, hist)
    return 0


def _cmd_distill(args) -> int:
    config = _load_config_arg(args)
    dataset = load_dataset(args.data)
    teacher = load_checkpoint(args.teacher)
    rows = run_distill(config, dataset, teacher, args.out_dir,
                       data_path=args.data, teacher_path=args.teacher)
    for row in rows:
        log.info("seed=%s ate=%s rpe_t=%s", row["seed"],
                 format_float(row["ate"]), format_float(row["rpe_t"]))
    return 0


def _cmd_evaluate(args) -> int:
    if args.checkpoint:
        if not args.data:
            raise ConfigError("evaluate: --checkpoint requires --data")
        model = load_checkpoint(args.checkpoint)
        dataset = load_dataset(args.data)
        traj_dir = os.path.join(args.out_dir, "trajectories") if args.out_dir else None
        metrics = evaluate_model(model, dataset, split=args.split,
                                 align=args.align, traj_dir=traj_dir)
    elif args.pred and args.gt:
        pred = load_kitti_poses(args.pred)
        gt = load_kitti_poses(args.gt)
        rpe_t, rpe_r = rpe(relative_deltas(pred), relative_deltas(gt))
        metrics = {
            "per_sequence": [],
            "rpe_t": rpe_t,
            "rpe_r": rpe_r,
            "ate": ate(pred, gt, align=args.align),
        }
    else:
        raise ConfigError("evaluate: need --checkpoint/--data or --pred/--gt")
    print(f"rpe_t {format_float(metrics['rpe_t'])}")
    print(f"rpe_r {format_float(metrics['rpe_r'])}")
    print(f"ate {format_float(metrics['ate'])}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "metrics.csv"), "w") as f:
            f.write("sequence,rpe_t,rpe_r,ate\n")
            for row in metrics["per_sequence"]:
                f.write(f"{row['sequence']},{format_float(row['rpe_t'])},"
                        f"{format_float(row['rpe_r'])},{format_float(row['ate'])}\n")
            f.write(f"aggregate,{format_float(metrics['rpe_t'])},"
                    f"{format_float(metrics['rpe_r'])},{format_float(metrics['ate'])}\n")
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config_arg(args)
    dataset = load_dataset(args.data)
    result = run_ablation(config, dataset, args.out_dir)
    for row in result["table"]:
        log.info("%-5s %-12s ate_median=%s", row["stage1"], row["variant"],
                 format_float(row["ate_median"]))
    if not result["gate"]:
        log.warning("teacher quality gate failed for some seed: run inconclusive")
    log.info("grid finished in %.1f s", result["elapsed_s"])
    return 0


def _cmd_capacity(args) -> int:
    dataset = load_dataset(args.data) if args.data else None
    rows = report_capacity(args.teacher, args.students, args.out_dir,
                           dataset=dataset, calls=args.calls)
    for row in rows:
        log.info("%-24s params=%-8d weights%%=%.2f inference_ms=%.3f",
                 row["name"], row["params"], row["weights_pct"], row["inference_ms"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posedistill",
        description="Distillation benchmark for 6-DoF pose regressors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_dir=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed(s)")
        if out_dir:
            p.add_argument("--out-dir", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    common(p)
    p.add_argument("--num-train", type=int)
    p.add_argument("--num-val", type=int)
    p.add_argument("--num-test", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--noise-base", type=float)
    p.add_argument("--noise-outlier-prob", type=float)
    p.add_argument("--noise-outlier-scale", type=float)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-teacher", help="supervised teacher training")
    common(p)
    p.add_argument("--data", required=True, help="dataset file")
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("build-cache", help="teacher predictions and trust weights")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.set_defaults(func=_cmd_build_cache)

    p = sub.add_parser("distill", help="two-stage student training")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("evaluate", help="RPE/ATE of a checkpoint or pose files")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", help="optional output directory")
    p.add_argument("--checkpoint", help="model checkpoint to evaluate")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--pred", help="predicted KITTI pose file")
    p.add_argument("--gt", help="ground-truth KITTI pose file")
    p.add_argument("--align", action="store_true",
                   help="rigid-align trajectories before ATE")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="stage-1 x loss-variant grid, paired seeds")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("capacity", help="parameter/size/latency ladder")
    common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--students", nargs="+", required=True)
    p.add_argument("--data", help="optional dataset for ATE column")
    p.add_argument("--calls", type=int, default=1000)
    p.set_defaults(func=_cmd_capacity)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
