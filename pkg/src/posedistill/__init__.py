"""Teacher-student distillation for 6-DoF pose regressors.

Implements and compares the blending objectives for regression
distillation (minimum, additive, upper-bound, probabilistic, attentive)
together with plain and attentive hint training, on a synthetic desk-scale
odometry benchmark with full trajectory-metric evaluation.
"""

__version__ = "0.1.0"

from .autodiff import AdamState, Tensor, adam_step, backward, dropout, zero_grad
from .config import DistillConfig, GeneratorConfig, load_config
from .data import (
    NoiseSpec,
    SequenceDataset,
    TeacherCache,
    build_teacher_cache,
    export_error_distribution,
    generate_synthetic,
    load_dataset,
    load_kitti_poses,
    save_dataset,
    save_kitti_poses,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    PoseDistillError,
    ShapeError,
)
from .geometry import (
    PoseDelta,
    ate,
    compose,
    euler_to_matrix,
    integrate,
    inverse,
    matrix_to_euler,
    rpe,
)
from .hint import attentive_hint_loss, hint_loss, train_stage1
from .losses import (
    LossVariant,
    additive_loss,
    attentive_loss,
    compute_loss,
    min_blend_loss,
    probabilistic_loss,
    student_loss,
    upper_bound_loss,
)
from .models import (
    MlpSpec,
    Model,
    count_parameters,
    distillation_rate,
    freeze_below,
    init_model,
    load_checkpoint,
    save_checkpoint,
    weights_fraction,
)
from .pipeline import (
    distill_run,
    evaluate_model,
    report_capacity,
    run_ablation,
    run_distill,
    train_teacher,
)
