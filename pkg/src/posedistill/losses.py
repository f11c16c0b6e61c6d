"""Blending objectives for distilling a pose regressor.

All losses take per-batch student predictions (a differentiable tensor of
shape (n, 6)), plus constant teacher predictions and ground truth of the
same shape, and return a scalar tensor. Every squared norm is evaluated
separately on the translation columns (0:3) and rotation columns (3:6)
and recombined as ``beta * translation + (1 - beta) * rotation``.

Teacher trust weights (phi) and the gate of the upper-bound objective are
treated as constants: no gradient flows through them.
"""

from __future__ import annotations

import enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError


class LossVariant(enum.Enum):
    STUDENT_ONLY = "student"
    MIN_STUDENT_IMITATION = "min"
    ADDITIVE_IMITATION = "additive"
    UPPER_BOUND = "upper_bound"
    PIL_LAPLACE = "pil_laplace"
    PIL_GAUSSIAN = "pil_gaussian"
    AIL = "ail"

    @classmethod
    def from_string(cls, name: str) -> "LossVariant":
        for variant in cls:
            if variant.value == name:
                return variant
        raise ValueError(f"unknown loss variant {name!r}; expected one of "
                         f"{[v.value for v in cls]}")


VARIANTS_NEEDING_TEACHER = frozenset(v for v in LossVariant if v is not LossVariant.STUDENT_ONLY)
VARIANTS_NEEDING_SIGMA = frozenset({LossVariant.PIL_LAPLACE, LossVariant.PIL_GAUSSIAN})


def _check_batch(pred: Tensor, *refs):
    if pred.data.ndim != 2 or pred.shape[1] != 6:
        raise ShapeError(f"loss: predictions must be (n, 6), got {pred.shape}")
    if pred.shape[0] < 1:
        raise ValueError("loss: empty batch")
    for ref in refs:
        if ref is None:
            raise ValueError("loss: missing teacher or ground-truth poses")
        if np.asarray(ref).shape != pred.shape:
            raise ShapeError(
                f"loss: reference shape {np.asarray(ref).shape} != {pred.shape}"
            )


def _check_weight(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"loss: {name}={value} outside [0, 1]")


def _group_sq(pred: Tensor, ref) -> tuple[Tensor, Tensor]:
    """Per-sample squared residual norms for translation and rotation."""
    diff = pred - np.asarray(ref, dtype=np.float64)
    sq = ad.square(diff)
    return ad.sum_(sq[:, :3], axis=1), ad.sum_(sq[:, 3:], axis=1)


def _combine(t_term: Tensor, r_term: Tensor, beta: float) -> Tensor:
    return beta * t_term + (1.0 - beta) * r_term


def student_loss(pred: Tensor, target, beta: float = 0.5) -> Tensor:
    """Mean beta-weighted squared error of predictions against ground truth."""
    _check_batch(pred, target)
    _check_weight("beta", beta)
    return ad.mean(_combine(*_group_sq(pred, target), beta))


def min_blend_loss(pred: Tensor, teacher, target, beta: float = 0.5) -> Tensor:
    """Per sample, the smaller of the student error and the imitation error."""
    _check_batch(pred, target, teacher)
    _check_weight("beta", beta)
    to_gt = _combine(*_group_sq(pred, target), beta)
    to_teacher = _combine(*_group_sq(pred, teacher), beta)
    return ad.mean(ad.minimum(to_gt, to_teacher))


def additive_loss(pred: Tensor, teacher, target, alpha: float = 0.5,
                  beta: float = 0.5) -> Tensor:
    """alpha-weighted sum of student error and imitation error."""
    _check_batch(pred, target, teacher)
    _check_weight("alpha", alpha)
    _check_weight("beta", beta)
    to_gt = _combine(*_group_sq(pred, target), beta)
    to_teacher = _combine(*_group_sq(pred, teacher), beta)
    return ad.mean(alpha * to_gt + (1.0 - alpha) * to_teacher)


def upper_bound_loss(pred: Tensor, teacher, target, alpha: float = 0.5,
                     beta: float = 0.5, per_component: bool = True) -> Tensor:
    """Imitation active only where the student is currently worse than the
    teacher (against ground truth); no penalty once it surpasses the teacher.

    The comparison is made separately for the translation and rotation
    groups by default; ``per_component=False`` gates on the beta-combined
    error instead. The gate is a constant in the backward pass.
    """
    _check_batch(pred, target, teacher)
    _check_weight("alpha", alpha)
    _check_weight("beta", beta)
    teacher_arr = np.asarray(teacher, dtype=np.float64)
    target_arr = np.asarray(target, dtype=np.float64)
    sq_t_gt, sq_r_gt = _group_sq(pred, target_arr)
    sq_t_im, sq_r_im = _group_sq(pred, teacher_arr)
    teach_t = np.sum((teacher_arr[:, :3] - target_arr[:, :3]) ** 2, axis=1)
    teach_r = np.sum((teacher_arr[:, 3:] - target_arr[:, 3:]) ** 2, axis=1)
    if per_component:
        gate_t = (sq_t_gt.data > teach_t).astype(np.float64)
        gate_r = (sq_r_gt.data > teach_r).astype(np.float64)
        imitation = _combine(sq_t_im * gate_t, sq_r_im * gate_r, beta)
    else:
        combined_teacher = beta * teach_t + (1.0 - beta) * teach_r
        student_combined = _combine(sq_t_gt, sq_r_gt, beta)
        gate = (student_combined.data > combined_teacher).astype(np.float64)
        imitation = _combine(sq_t_im, sq_r_im, beta) * gate
    student = _combine(sq_t_gt, sq_r_gt, beta)
    return ad.mean(alpha * student + (1.0 - alpha) * imitation)


def probabilistic_loss(pred: Tensor, teacher, target, sigma: Tensor,
                       alpha: float = 0.5, beta: float = 0.5,
                       family: str = "laplace") -> Tensor:
    """Imitation residual modeled by a parametric distribution with learned
    scale; minimizes the negative log likelihood (additive constants dropped).

    ``sigma`` is an (n, 2) tensor of positive scales, one per component
    group (translation column 0, rotation column 1), normally produced as
    exp of the model's log-scale head.
    """
    _check_batch(pred, target, teacher)
    _check_weight("alpha", alpha)
    _check_weight("beta", beta)
    if family not in ("laplace", "gaussian"):
        raise ValueError(f"probabilistic_loss: unknown family {family!r}")
    if sigma is None or sigma.shape != (pred.shape[0], 2):
        raise ShapeError(
            f"probabilistic_loss: sigma must be ({pred.shape[0]}, 2)"
        )
    if np.any(sigma.data <= 0.0):
        raise ValueError("probabilistic_loss: sigma must be positive")
    sq_t_im, sq_r_im = _group_sq(pred, teacher)
    sigma_t, sigma_r = sigma[:, 0], sigma[:, 1]
    if family == "laplace":
        term_t = ad.sqrt(sq_t_im) / sigma_t + ad.log(sigma_t)
        term_r = ad.sqrt(sq_r_im) / sigma_r + ad.log(sigma_r)
    else:
        term_t = sq_t_im / (2.0 * ad.square(sigma_t)) + ad.log(sigma_t)
        term_r = sq_r_im / (2.0 * ad.square(sigma_r)) + ad.log(sigma_r)
    imitation = _combine(term_t, term_r, beta)
    student = _combine(*_group_sq(pred, target), beta)
    return ad.mean(alpha * student + (1.0 - alpha) * imitation)


def attentive_loss(pred: Tensor, teacher, target, phi_t, phi_r,
                   alpha: float = 0.5, beta: float = 0.5,
                   clamp_phi: bool = False) -> Tensor:
    """Imitation weighted per sample by the normalized teacher loss.

    phi values come from the teacher cache, one per component group, and
    may be negative (literal normalization); ``clamp_phi`` restricts them
    to [0, 1].
    """
    _check_batch(pred, target, teacher)
    _check_weight("alpha", alpha)
    _check_weight("beta", beta)
    n = pred.shape[0]
    phi_t = np.asarray(phi_t, dtype=np.float64)
    phi_r = np.asarray(phi_r, dtype=np.float64)
    if phi_t.shape != (n,) or phi_r.shape != (n,):
        raise ShapeError(f"attentive_loss: phi arrays must be ({n},)")
    if clamp_phi:
        phi_t = np.clip(phi_t, 0.0, 1.0)
        phi_r = np.clip(phi_r, 0.0, 1.0)
    sq_t_im, sq_r_im = _group_sq(pred, teacher)
    imitation = _combine(sq_t_im * phi_t, sq_r_im * phi_r, beta)
    student = _combine(*_group_sq(pred, target), beta)
    return ad.mean(alpha * student + (1.0 - alpha) * imitation)


def compute_loss(variant: LossVariant, pred: Tensor, target, *, teacher=None,
                 sigma: Tensor = None, phi_t=None, phi_r=None,
                 alpha: float = 0.5, beta: float = 0.5,
                 clamp_phi: bool = False, upper_per_component: bool = True) -> Tensor:
    """Dispatch to the configured blending objective."""
    if variant in VARIANTS_NEEDING_TEACHER and teacher is None:
        raise ValueError(f"loss variant {variant.value} requires teacher predictions")
    if variant is LossVariant.STUDENT_ONLY:
        return student_loss(pred, target, beta)
    if variant is LossVariant.MIN_STUDENT_IMITATION:
        return min_blend_loss(pred, teacher, target, beta)
    if variant is LossVariant.ADDITIVE_IMITATION:
        return additive_loss(pred, teacher, target, alpha, beta)
    if variant is LossVariant.UPPER_BOUND:
        return upper_bound_loss(pred, teacher, target, alpha, beta, upper_per_component)
    if variant is LossVariant.PIL_LAPLACE:
        return probabilistic_loss(pred, teacher, target, sigma, alpha, beta, "laplace")
    if variant is LossVariant.PIL_GAUSSIAN:
        return probabilistic_loss(pred, teacher, target, sigma, alpha, beta, "gaussian")
    if variant is LossVariant.AIL:
        return attentive_loss(pred, teacher, target, phi_t, phi_r, alpha, beta, clamp_phi)
    raise ValueError(f"unhandled loss variant {variant}")
