"""Orchestration: teacher training, two-stage distillation, evaluation,
the ablation grid, and the capacity report.

Every run is a pure function of (config, dataset, seed): rng streams are
derived from the seed by purpose, reductions happen in fixed order, and
report files format floats with shortest round-trip decimals, so reruns
are bit-identical. Wall-clock timings are recorded in the manifest, never
in report.csv.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState
from .config import DistillConfig
from .data import (
    SequenceDataset,
    TeacherCache,
    build_teacher_cache,
    format_float,
    save_kitti_poses,
)
from .errors import DataError, DivergenceError
from .geometry import ate, euler_to_matrix, integrate, rotation_angle, rpe
from .hint import train_stage1
from .losses import (
    LossVariant,
    VARIANTS_NEEDING_SIGMA,
    compute_loss,
    student_loss,
)
from .models import (
    Model,
    count_parameters,
    check_hint_compatible,
    distillation_rate,
    freeze_below,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import minibatches, rng_stream

REPORT_SCHEMA = 1
REPORT_COLUMNS = (
    "schema", "seed", "stage1", "variant", "alpha", "beta", "rec_error",
    "rpe_t", "rpe_r", "ate", "teacher_params", "student_params",
    "d_rate_pct", "teacher_gate",
)
_FLOAT_COLUMNS = frozenset({"alpha", "beta", "rec_error", "rpe_t", "rpe_r",
                            "ate", "d_rate_pct"})


def _write_csv(path, columns, rows, float_columns=_FLOAT_COLUMNS):
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for c in columns:
                v = row[c]
                cells.append(format_float(v) if c in float_columns else str(v))
            f.write(",".join(cells) + "\n")


def evaluate_model(model: Model, dataset: SequenceDataset, split: str = "test",
                   align: bool = False, traj_dir=None) -> dict:
    """RPE and ATE per sequence plus frame-pooled aggregates.

    Predicted (and ground-truth) trajectories go to ``traj_dir`` in KITTI
    pose format when given.
    """
    seqs = dataset.split(split)
    if not seqs:
        raise DataError(f"evaluate: no '{split}' sequences")
    per_sequence = []
    t_sq_all, ang_sq_all, pos_sq_all = [], [], []
    for seq in seqs:
        pred, _ = model.predict(seq.features)
        seq_rpe_t, seq_rpe_r = rpe(pred, seq.deltas)
        pred_traj = integrate(pred)
        gt_traj = integrate(seq.deltas)
        seq_ate = ate(pred_traj, gt_traj, align=align)
        per_sequence.append(
            {"sequence": seq.name, "rpe_t": seq_rpe_t, "rpe_r": seq_rpe_r,
             "ate": seq_ate}
        )
        t_sq_all.append(np.sum((pred[:, :3] - seq.deltas[:, :3]) ** 2, axis=1))
        angs = [
            rotation_angle(euler_to_matrix(g).T @ euler_to_matrix(p))
            for g, p in zip(seq.deltas[:, 3:], pred[:, 3:])
        ]
        ang_sq_all.append(np.square(angs))
        pos_sq_all.append(
            np.sum((pred_traj[:, :3, 3] - gt_traj[:, :3, 3]) ** 2, axis=1)
        )
        if traj_dir is not None:
            os.makedirs(traj_dir, exist_ok=True)
            save_kitti_poses(pred_traj, os.path.join(traj_dir, f"{seq.name}_pred.txt"))
            save_kitti_poses(gt_traj, os.path.join(traj_dir, f"{seq.name}_gt.txt"))
    return {
        "per_sequence": per_sequence,
        "rpe_t": float(np.sqrt(np.mean(np.concatenate(t_sq_all)))),
        "rpe_r": float(np.sqrt(np.mean(np.concatenate(ang_sq_all)))),
        "ate": float(np.sqrt(np.mean(np.concatenate(pos_sq_all)))),
    }


def _validation_metrics(model: Model, dataset: SequenceDataset, beta: float) -> dict:
    feats, deltas, _ = dataset.flat("val")
    pose, _, _ = model.forward(feats, training=False)
    loss = student_loss(pose, deltas, beta)
    rpe_t, rpe_r = rpe(pose.data, deltas)
    return {"loss": float(loss.data), "rpe_t": rpe_t, "rpe_r": rpe_r}


def train_teacher(config: DistillConfig, dataset: SequenceDataset, seed: int):
    """Supervised teacher training; returns the model and per-epoch history."""
    model = init_model(config.teacher, rng_stream(seed, "teacher_init"))
    feats, deltas, _ = dataset.flat("train")
    params = model.parameters()
    state = AdamState.for_params(params, lr=config.lr)
    rng = rng_stream(seed, "teacher_train")
    history = []
    for epoch in range(config.teacher_epochs):
        for idx in minibatches(feats.shape[0], config.batch_size, rng):
            pose, _, _ = model.forward(feats[idx], training=True, rng=rng)
            loss = student_loss(pose, deltas[idx], config.beta)
            if not np.isfinite(loss.data):
                raise DivergenceError("teacher loss is not finite",
                                      stage="teacher", epoch=epoch, seed=seed)
            ad.zero_grad(params)
            ad.backward(loss)
            ad.adam_step(params, state)
        history.append({"epoch": epoch, **_validation_metrics(model, dataset, config.beta)})
    return model, history


def teacher_gate_passed(config: DistillConfig, teacher: Model,
                        dataset: SequenceDataset) -> bool:
    """Quality gate: the teacher must be accurate enough on the validation
    split for teacher-relative conclusions to mean anything."""
    val = _validation_metrics(teacher, dataset, config.beta)
    return val["rpe_t"] <= config.teacher_gate_rpe_t


def _train_stage2(student: Model, cache: TeacherCache, dataset: SequenceDataset,
                  config: DistillConfig, variant: LossVariant, alpha: float,
                  seed: int) -> None:
    feats, deltas, ids = dataset.flat("train")
    positions = cache.positions(ids)
    teacher_pred = cache.pred[positions]
    phi_t = cache.phi_t[positions]
    phi_r = cache.phi_r[positions]
    params = student.trainable_parameters()
    state = AdamState.for_params(params, lr=config.lr)
    rng = rng_stream(seed, "stage2_train")
    needs_sigma = variant in VARIANTS_NEEDING_SIGMA
    for epoch in range(config.stage2_epochs):
        for idx in minibatches(feats.shape[0], config.batch_size, rng):
            pose, _, log_sigma = student.forward(feats[idx], training=True, rng=rng)
            sigma = ad.exp(log_sigma) if needs_sigma else None
            loss = compute_loss(
                variant, pose, deltas[idx],
                teacher=teacher_pred[idx], sigma=sigma,
                phi_t=phi_t[idx], phi_r=phi_r[idx],
                alpha=alpha, beta=config.beta,
                clamp_phi=config.clamp_phi,
                upper_per_component=config.upper_per_component,
            )
            if not np.isfinite(loss.data):
                raise DivergenceError("stage-2 loss is not finite",
                                      stage="stage2", epoch=epoch, seed=seed)
            ad.zero_grad(params)
            ad.backward(loss)
            ad.adam_step(params, state)


def distill_run(config: DistillConfig, dataset: SequenceDataset, teacher: Model,
                cache: TeacherCache, seed: int, stage1: str = None,
                variant: str = None, alpha: float = None):
    """One two-stage distillation: returns (student, report row, timings).

    ``stage1``/``variant``/``alpha`` override the config for ablation rows;
    the student initialization depends only on the seed, so rows sharing a
    seed are paired.
    """
    stage1 = config.stage1 if stage1 is None else stage1
    variant = config.variant if variant is None else variant
    alpha = config.alpha if alpha is None else alpha
    loss_variant = LossVariant.from_string(variant)
    spec = config.student
    if loss_variant in VARIANTS_NEEDING_SIGMA and not spec.sigma_head:
        spec = type(spec).from_dict({**spec.to_dict(), "sigma_head": True})
    student = init_model(spec, rng_stream(seed, "student_init"))
    check_hint_compatible(teacher, student)

    t0 = time.perf_counter()
    stage1_report = train_stage1(
        student, cache, dataset, stage1,
        epochs=config.stage1_epochs, batch_size=config.batch_size,
        lr=config.lr, beta=config.beta, phi_mode=config.hint_phi_mode,
        seed=seed,
    )
    t1 = time.perf_counter()
    if stage1 != "none":
        freeze_below(student, student.spec.hint_index)
    _train_stage2(student, cache, dataset, config, loss_variant, alpha, seed)
    t2 = time.perf_counter()

    metrics = evaluate_model(student, dataset, split="test")
    row = {
        "schema": REPORT_SCHEMA,
        "seed": seed,
        "stage1": stage1,
        "variant": variant,
        "alpha": alpha,
        "beta": config.beta,
        "rec_error": stage1_report["reconstruction_error"],
        "rpe_t": metrics["rpe_t"],
        "rpe_r": metrics["rpe_r"],
        "ate": metrics["ate"],
        "teacher_params": count_parameters(teacher),
        "student_params": count_parameters(student),
        "d_rate_pct": 100.0 * distillation_rate(teacher, student),
    }
    timings = {"stage1_s": t1 - t0, "stage2_s": t2 - t1}
    return student, row, timings


def _median_row(rows):
    med = dict(rows[0])
    med["seed"] = "median"
    for key in ("rec_error", "rpe_t", "rpe_r", "ate", "d_rate_pct"):
        med[key] = float(np.median([r[key] for r in rows]))
    return med


def run_distill(config: DistillConfig, dataset: SequenceDataset, teacher: Model,
                out_dir, data_path=None, teacher_path=None) -> list:
    """Seed sweep of one (stage1, variant) setting; writes report.csv,
    manifest.json, student checkpoints, and test trajectories."""
    os.makedirs(out_dir, exist_ok=True)
    cache = build_teacher_cache(teacher, dataset)
    gate = teacher_gate_passed(config, teacher, dataset)
    rows, all_timings = [], {}
    for seed in config.seeds:
        student, row, timings = distill_run(config, dataset, teacher, cache, seed)
        row["teacher_gate"] = "pass" if gate else "fail"
        rows.append(row)
        all_timings[f"seed{seed}"] = timings
        save_checkpoint(student, os.path.join(out_dir, f"student_seed{seed}.npz"))
        evaluate_model(student, dataset, split="test",
                       traj_dir=os.path.join(out_dir, "trajectories", f"seed{seed}"))
    report_rows = rows + [_median_row(rows)]
    _write_csv(os.path.join(out_dir, "report.csv"), REPORT_COLUMNS, report_rows)
    manifest = {
        "command": "distill",
        "report_schema": REPORT_SCHEMA,
        "resolved_config": config.to_dict(),
        "data_path": data_path,
        "teacher_path": teacher_path,
        "teacher_gate": "pass" if gate else "fail",
        "timings": all_timings,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return report_rows


ABLATION_COLUMNS = (
    "schema", "stage1", "variant", "alpha", "beta", "n_seeds",
    "rec_error_median", "rpe_t_median", "rpe_r_median", "ate_median",
    "teacher_gate",
)
_ABLATION_FLOATS = frozenset({"alpha", "beta", "rec_error_median", "rpe_t_median",
                              "rpe_r_median", "ate_median"})


def run_ablation(config: DistillConfig, dataset: SequenceDataset, out_dir) -> dict:
    """Grid of (stage-1 mode x loss variant) over shared seeds.

    One teacher per seed is shared by every row, so comparisons are paired.
    Writes ablation.csv (per-row medians), ablation_runs.csv (every run),
    and a manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    grid = config.grid_rows
    runs = []
    gates = {}
    t_start = time.perf_counter()
    for seed in config.seeds:
        teacher, _ = train_teacher(config, dataset, seed)
        cache = build_teacher_cache(teacher, dataset)
        gates[seed] = teacher_gate_passed(config, teacher, dataset)
        for cell in grid:
            _, row, _ = distill_run(
                config, dataset, teacher, cache, seed,
                stage1=cell["stage1"], variant=cell["variant"], alpha=cell["alpha"],
            )
            row["teacher_gate"] = "pass" if gates[seed] else "fail"
            runs.append(row)
    elapsed = time.perf_counter() - t_start
    all_gates_pass = all(gates.values())

    table = []
    for cell in grid:
        cell_runs = [r for r in runs
                     if r["stage1"] == cell["stage1"] and r["variant"] == cell["variant"]
                     and r["alpha"] == cell["alpha"]]
        table.append({
            "schema": REPORT_SCHEMA,
            "stage1": cell["stage1"],
            "variant": cell["variant"],
            "alpha": cell["alpha"],
            "beta": config.beta,
            "n_seeds": len(cell_runs),
            "rec_error_median": float(np.median([r["rec_error"] for r in cell_runs])),
            "rpe_t_median": float(np.median([r["rpe_t"] for r in cell_runs])),
            "rpe_r_median": float(np.median([r["rpe_r"] for r in cell_runs])),
            "ate_median": float(np.median([r["ate"] for r in cell_runs])),
            "teacher_gate": "pass" if all_gates_pass else "inconclusive",
        })
    _write_csv(os.path.join(out_dir, "ablation.csv"), ABLATION_COLUMNS, table,
               float_columns=_ABLATION_FLOATS)
    _write_csv(os.path.join(out_dir, "ablation_runs.csv"), REPORT_COLUMNS, runs)
    manifest = {
        "command": "ablate",
        "report_schema": REPORT_SCHEMA,
        "resolved_config": config.to_dict(),
        "teacher_gates": {str(s): ("pass" if g else "fail") for s, g in gates.items()},
        "wall_clock_s": elapsed,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return {"table": table, "runs": runs, "gate": all_gates_pass, "elapsed_s": elapsed}


CAPACITY_COLUMNS = (
    "name", "params", "weights_pct", "d_rate_pct", "checkpoint_bytes",
    "inference_ms", "ate",
)


def measure_inference_ms(model: Model, features, calls: int = 1000) -> float:
    """Median wall-clock of single-pair eval-mode predictions."""
    single = np.asarray(features[:1], dtype=np.float64)
    times = np.empty(calls)
    for i in range(calls):
        t0 = time.perf_counter()
        model.forward(single, training=False)
        times[i] = time.perf_counter() - t0
    return float(np.median(times) * 1e3)


def report_capacity(teacher_path, student_paths, out_dir,
                    dataset: SequenceDataset = None, calls: int = 1000) -> list:
    """Parameter counts, checkpoint sizes, inference timing, and (with a
    dataset) test ATE for the teacher and a ladder of students."""
    os.makedirs(out_dir, exist_ok=True)
    teacher = load_checkpoint(teacher_path)
    teacher_count = count_parameters(teacher)
    probe = (dataset.flat("test")[0] if dataset is not None
             else np.zeros((1, teacher.spec.input_dim)))
    rows = []
    entries = [("teacher", teacher_path, teacher)]
    entries += [
        (os.path.splitext(os.path.basename(p))[0], p, load_checkpoint(p))
        for p in student_paths
    ]
    for name, path, model in entries:
        n = count_parameters(model)
        row = {
            "name": name,
            "params": n,
            "weights_pct": 100.0 * n / teacher_count,
            "d_rate_pct": 100.0 * (1.0 - n / teacher_count),
            "checkpoint_bytes": os.path.getsize(path),
            "inference_ms": measure_inference_ms(model, probe, calls),
            "ate": "",
        }
        if dataset is not None:
            row["ate"] = format_float(evaluate_model(model, dataset, "test")["ate"])
        rows.append(row)
    columns = CAPACITY_COLUMNS
    with open(os.path.join(out_dir, "capacity.csv"), "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for c in columns:
                v = row[c]
                if c in ("weights_pct", "d_rate_pct", "inference_ms"):
                    cells.append(format_float(v))
                else:
                    cells.append(str(v))
            f.write(",".join(cells) + "\n")
    return rows
