"""Stage-1 intermediate-representation training: plain and attentive.

The student's guided-layer activation is regressed onto the teacher's
cached hint-layer representation. The attentive variant weights each
sample by its teacher trust weight, so representations behind unreliable
teacher predictions contribute less.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .data import SequenceDataset, TeacherCache
from .errors import DataError, DivergenceError, ShapeError
from .training import minibatches, rng_stream

STAGE1_MODES = ("none", "ht", "aht")
HINT_PHI_MODES = ("blend", "translation", "rotation")


def hint_loss(student_rep: Tensor, teacher_rep) -> Tensor:
    """Mean per-sample squared representation difference."""
    teacher_rep = np.asarray(teacher_rep, dtype=np.float64)
    if student_rep.shape != teacher_rep.shape:
        raise ShapeError(
            f"hint_loss: representation widths differ "
            f"({student_rep.shape} vs {teacher_rep.shape})"
        )
    if student_rep.shape[0] < 1:
        raise ValueError("hint_loss: empty batch")
    per_sample = ad.sum_(ad.square(student_rep - teacher_rep), axis=1)
    return ad.mean(per_sample)


def attentive_hint_loss(student_rep: Tensor, teacher_rep, phi) -> Tensor:
    """Hint loss with per-sample trust weights."""
    teacher_rep = np.asarray(teacher_rep, dtype=np.float64)
    if student_rep.shape != teacher_rep.shape:
        raise ShapeError(
            f"attentive_hint_loss: representation widths differ "
            f"({student_rep.shape} vs {teacher_rep.shape})"
        )
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (student_rep.shape[0],):
        raise ShapeError(f"attentive_hint_loss: phi must be ({student_rep.shape[0]},)")
    per_sample = ad.sum_(ad.square(student_rep - teacher_rep), axis=1)
    return ad.mean(per_sample * phi)


def hint_phi(cache: TeacherCache, positions, beta: float = 0.5,
             mode: str = "blend") -> np.ndarray:
    """Trust weight for a shared representation feeding both outputs.

    The representation drives translation and rotation alike, so the
    default blends the two group weights with the same beta that balances
    the groups in the final loss; 'translation'/'rotation' pick one side.
    """
    if mode not in HINT_PHI_MODES:
        raise ValueError(f"hint_phi: unknown mode {mode!r}")
    if mode == "translation":
        return cache.phi_t[positions]
    if mode == "rotation":
        return cache.phi_r[positions]
    return beta * cache.phi_t[positions] + (1.0 - beta) * cache.phi_r[positions]


def reconstruction_error(student, cache: TeacherCache, dataset: SequenceDataset,
                         split: str = "val") -> float:
    """RMS elementwise difference between student and teacher representations,
    evaluated deterministically (no dropout) on a held-out split."""
    feats, _, ids = dataset.flat(split)
    rep = student.forward_prefix(feats, training=False).data
    target = cache.rep[cache.positions(ids)]
    return float(np.sqrt(np.mean((rep - target) ** 2)))


def train_stage1(student, cache: TeacherCache, dataset: SequenceDataset,
                 mode: str, *, epochs: int = 30, batch_size: int = 64,
                 lr: float = 1e-4, beta: float = 0.5, phi_mode: str = "blend",
                 seed: int = 0, eval_split: str = "val") -> dict:
    """Train the student prefix (layers up to the guided layer) against the
    cached teacher representations; layers above the prefix are untouched.

    mode 'none' skips training entirely. Returns the final held-out RMS
    reconstruction error along with the mode and epoch count.
    """
    if mode not in STAGE1_MODES:
        raise ValueError(f"train_stage1: unknown mode {mode!r}")
    if cache.rep.shape[1] != student.spec.hint_width:
        raise DataError(
            f"cache representations ({cache.rep.shape[1]} wide) do not match "
            f"the student guided layer ({student.spec.hint_width} wide)"
        )
    if mode != "none" and epochs > 0:
        feats, _, ids = dataset.flat("train")
        positions = cache.positions(ids)
        target = cache.rep[positions]
        phi = hint_phi(cache, positions, beta, phi_mode)
        params = student.parameters(
            first_layer=1, last_layer=student.spec.hint_index, include_sigma=False
        )
        state = AdamState.for_params(params, lr=lr)
        rng = rng_stream(seed, "stage1_train")
        for epoch in range(epochs):
            for idx in minibatches(feats.shape[0], batch_size, rng):
                rep = student.forward_prefix(feats[idx], training=True, rng=rng)
                if mode == "ht":
                    loss = hint_loss(rep, target[idx])
                else:
                    loss = attentive_hint_loss(rep, target[idx], phi[idx])
                if not np.isfinite(loss.data):
                    raise DivergenceError(
                        "stage-1 loss is not finite", stage="stage1",
                        epoch=epoch, seed=seed,
                    )
                ad.zero_grad(params)
                ad.backward(loss)
                ad.adam_step(params, state)
    return {
        "mode": mode,
        "epochs": 0 if mode == "none" else epochs,
        "reconstruction_error": reconstruction_error(student, cache, dataset, eval_split),
    }
