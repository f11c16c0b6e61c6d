"""Run configuration: schema, defaults, strict validation, JSON loading.

Unknown keys are rejected everywhere so a typo cannot silently fall back
to a default. The fully resolved configuration (defaults included) is what
gets recorded in the run manifest; re-running from a manifest reproduces
the run exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import NoiseSpec
from .errors import ConfigError
from .hint import HINT_PHI_MODES, STAGE1_MODES
from .losses import LossVariant
from .models import MlpSpec


def _check_keys(name, d, allowed):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")


def _spec_from_config(name, d) -> MlpSpec:
    _check_keys(name, d, {"widths", "hint_index", "activations", "dropout", "sigma_head"})
    if "widths" not in d or "hint_index" not in d:
        raise ConfigError(f"{name}: 'widths' and 'hint_index' are required")
    try:
        return MlpSpec.from_dict(d)
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    num_train: int = 12
    num_val: int = 2
    num_test: int = 2
    length: int = 500
    feature_dim: int = 32
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    @classmethod
    def from_dict(cls, d):
        _check_keys("generator", d, {f.name for f in dataclasses.fields(cls)})
        kwargs = dict(d)
        if "noise" in kwargs:
            _check_keys("generator.noise", kwargs["noise"],
                        {"base", "outlier_prob", "outlier_scale"})
            kwargs["noise"] = NoiseSpec.from_dict(kwargs["noise"])
        return cls(**kwargs)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["noise"] = self.noise.to_dict()
        return d


# default architectures for the desk-scale benchmark: teacher with the hint
# taken at the penultimate layer, student sharing that layer's width; the
# default student keeps ~7% of the teacher's weights
DEFAULT_TEACHER = {"widths": [32, 128, 128, 64, 64, 6], "hint_index": 4}
DEFAULT_STUDENT = {"widths": [32, 20, 64, 6], "hint_index": 2}

_ABLATION_DEFAULT_ROWS = [
    {"stage1": "none", "variant": "student"},
    {"stage1": "ht", "variant": "student"},
    {"stage1": "ht", "variant": "ail"},
    {"stage1": "aht", "variant": "student"},
    {"stage1": "aht", "variant": "ail"},
]


@dataclass(frozen=True)
class DistillConfig:
    """Everything a distillation run depends on, besides the dataset bits."""

    teacher: MlpSpec = None
    student: MlpSpec = None
    stage1: str = "aht"
    variant: str = "ail"
    alpha: float = 0.5
    beta: float = 0.5
    teacher_epochs: int = 30
    stage1_epochs: int = 30
    stage2_epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    dropout: float = 0.25
    seeds: tuple = (0,)
    clamp_phi: bool = False
    hint_phi_mode: str = "blend"
    upper_per_component: bool = True
    teacher_gate_rpe_t: float = 0.25
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    rows: tuple = ()  # ablation grid; empty means the standard 5-row design

    def __post_init__(self):
        # specs given as dicts (or omitted) inherit the run-level dropout
        # unless they pin their own
        for name, default in (("teacher", DEFAULT_TEACHER), ("student", DEFAULT_STUDENT)):
            spec = getattr(self, name)
            if spec is None:
                spec = dict(default)
            if isinstance(spec, dict):
                spec = dict(spec)
                spec.setdefault("dropout", self.dropout)
                spec = _spec_from_config(name, spec)
            object.__setattr__(self, name, spec)
        if self.stage1 not in STAGE1_MODES:
            raise ConfigError(f"stage1 must be one of {STAGE1_MODES}, got {self.stage1!r}")
        try:
            LossVariant.from_string(self.variant)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        for name in ("teacher_epochs", "stage1_epochs", "stage2_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout={self.dropout} outside [0, 1)")
        if self.hint_phi_mode not in HINT_PHI_MODES:
            raise ConfigError(
                f"hint_phi_mode must be one of {HINT_PHI_MODES}, got {self.hint_phi_mode!r}"
            )
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        rows = []
        for row in (self.rows or _ABLATION_DEFAULT_ROWS):
            _check_keys("rows[]", row, {"stage1", "variant", "alpha"})
            if row.get("stage1") not in STAGE1_MODES:
                raise ConfigError(f"rows[]: bad stage1 {row.get('stage1')!r}")
            LossVariant.from_string(row.get("variant", ""))
            rows.append({
                "stage1": row["stage1"],
                "variant": row["variant"],
                "alpha": float(row.get("alpha", self.alpha)),
            })
        object.__setattr__(self, "rows", tuple(tuple(sorted(r.items())) for r in rows))

    @property
    def grid_rows(self):
        return [dict(r) for r in self.rows]

    @classmethod
    def from_dict(cls, d) -> "DistillConfig":
        _check_keys("config", d, {f.name for f in dataclasses.fields(cls)})
        kwargs = dict(d)
        if "generator" in kwargs:
            kwargs["generator"] = GeneratorConfig.from_dict(kwargs["generator"])
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(kwargs["seeds"])
        if "rows" in kwargs:
            kwargs["rows"] = list(kwargs["rows"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return {
            "teacher": self.teacher.to_dict(),
            "student": self.student.to_dict(),
            "stage1": self.stage1,
            "variant": self.variant,
            "alpha": self.alpha,
            "beta": self.beta,
            "teacher_epochs": self.teacher_epochs,
            "stage1_epochs": self.stage1_epochs,
            "stage2_epochs": self.stage2_epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "dropout": self.dropout,
            "seeds": list(self.seeds),
            "clamp_phi": self.clamp_phi,
            "hint_phi_mode": self.hint_phi_mode,
            "upper_per_component": self.upper_per_component,
            "teacher_gate_rpe_t": self.teacher_gate_rpe_t,
            "generator": self.generator.to_dict(),
            "rows": self.grid_rows,
        }

    def replace(self, **kwargs) -> "DistillConfig":
        current = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        current["rows"] = self.grid_rows
        current.update(kwargs)
        return DistillConfig(**current)


def load_config(path) -> DistillConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be an object")
    return DistillConfig.from_dict(raw)
