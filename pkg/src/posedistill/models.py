"""MLP teacher and student pose regressors.

Both networks share one architecture family: fully connected layers with a
designated intermediate layer whose activation is the representation used
for hint training. The layer is called ``hint`` on the teacher side and
``guided`` on the student side; both must have the same width.

Models predicting with a probabilistic imitation objective carry an extra
head that emits per-sample log scales (one for translation, one for
rotation) off the last hidden layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

POSE_DIM = 6
CHECKPOINT_FORMAT = "posedistill-checkpoint-v1"
_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: widths, activations, hint layer, dropout.

    ``widths`` runs input dim -> hidden widths -> 6 outputs. Layer ``i``
    (1-based) maps widths[i-1] to widths[i]; ``hint_index`` names the layer
    whose post-activation output is the hint/guided representation.
    """

    widths: tuple
    hint_index: int
    activations: tuple = ()
    dropout: float = 0.25
    sigma_head: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ConfigError(f"MlpSpec: bad widths {widths}")
        if widths[-1] != POSE_DIM:
            raise ConfigError(f"MlpSpec: output width must be {POSE_DIM}, got {widths[-1]}")
        n_hidden = len(widths) - 2
        acts = self.activations
        if isinstance(acts, str):
            acts = (acts,) * n_hidden
        elif not acts:
            acts = ("tanh",) * n_hidden
        else:
            acts = tuple(acts)
        if len(acts) != n_hidden:
            raise ConfigError(
                f"MlpSpec: {len(acts)} activations for {n_hidden} hidden layers"
            )
        for a in acts:
            if a not in _ACTIVATIONS:
                raise ConfigError(f"MlpSpec: unknown activation {a!r}")
        object.__setattr__(self, "activations", acts)
        if not 0 < self.hint_index < self.num_layers:
            raise ConfigError(
                f"MlpSpec: hint_index {self.hint_index} outside (0, {self.num_layers})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"MlpSpec: dropout {self.dropout} outside [0, 1)")

    @property
    def num_layers(self):
        return len(self.widths) - 1

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def hint_width(self):
        return self.widths[self.hint_index]

    def to_dict(self):
        return {
            "widths": list(self.widths),
            "hint_index": self.hint_index,
            "activations": list(self.activations),
            "dropout": self.dropout,
            "sigma_head": self.sigma_head,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            widths=tuple(d["widths"]),
            hint_index=int(d["hint_index"]),
            activations=d.get("activations", ()),  # str or per-layer list
            dropout=float(d.get("dropout", 0.25)),
            sigma_head=bool(d.get("sigma_head", False)),
        )


class Model:
    """Parameter container plus forward pass for one MLP regressor."""

    def __init__(self, spec: MlpSpec, layers, sigma_layer=None, frozen_below: int = 0):
        self.spec = spec
        self.layers = layers  # list of (W: Tensor, b: Tensor), 1-based externally
        self.sigma_layer = sigma_layer  # (W, b) or None
        self.frozen_below = frozen_below

    def forward(self, x, training: bool = False, rng=None):
        """Run features (n, input_dim) through the net.

        Returns (pose, representation, log_sigma): the 6-vector outputs, the
        activation at the hint/guided layer, and the log-scale head output
        (None unless the spec has one). Dropout is applied after each hidden
        activation in training mode; the captured representation is the
        activation before its own dropout mask.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(
                f"forward: features {x.shape} incompatible with input dim "
                f"{self.spec.input_dim}"
            )
        if training and self.spec.dropout > 0.0 and rng is None:
            raise ValueError("forward: training mode with dropout needs an rng")
        h = Tensor(x)
        representation = None
        last_hidden = None
        for i, (w, b) in enumerate(self.layers, start=1):
            h = (h @ w) + b
            if i < self.spec.num_layers:
                h = _ACTIVATIONS[self.spec.activations[i - 1]](h)
                if i == self.spec.hint_index:
                    representation = h
                h = ad.dropout(h, self.spec.dropout, training, rng)
                if i == self.spec.num_layers - 1:
                    last_hidden = h
        log_sigma = None
        if self.sigma_layer is not None:
            sw, sb = self.sigma_layer
            log_sigma = (last_hidden @ sw) + sb
        return h, representation, log_sigma

    def forward_prefix(self, x, training: bool = False, rng=None):
        """Run layers 1..hint_index only, returning the representation tensor.

        Dropout applies after every activation before the hint layer, same
        as the full pass; the returned activation itself is not masked.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(
                f"forward_prefix: features {x.shape} incompatible with input dim "
                f"{self.spec.input_dim}"
            )
        if training and self.spec.dropout > 0.0 and rng is None:
            raise ValueError("forward_prefix: training mode with dropout needs an rng")
        h = Tensor(x)
        for i, (w, b) in enumerate(self.layers[: self.spec.hint_index], start=1):
            h = (h @ w) + b
            h = _ACTIVATIONS[self.spec.activations[i - 1]](h)
            if i < self.spec.hint_index:
                h = ad.dropout(h, self.spec.dropout, training, rng)
        return h

    def predict(self, features):
        """Eval-mode forward: returns (poses, representation) as arrays."""
        pose, rep, _ = self.forward(features, training=False)
        return pose.data, rep.data

    def parameters(self, first_layer: int = 1, last_layer=None, include_sigma=True):
        """Flat list of parameter tensors for layers in [first, last] (1-based)."""
        last = self.spec.num_layers if last_layer is None else last_layer
        params = []
        for i, (w, b) in enumerate(self.layers, start=1):
            if first_layer <= i <= last:
                params.extend([w, b])
        if include_sigma and self.sigma_layer is not None and last >= self.spec.num_layers:
            params.extend(self.sigma_layer)
        return params

    def trainable_parameters(self):
        return self.parameters(first_layer=self.frozen_below + 1)


def init_model(spec: MlpSpec, rng: np.random.Generator) -> Model:
    """He-style uniform init scaled by fan-in; biases zero; sigma head zero.

    A zero sigma head makes exp(log_sigma) start at 1, so probabilistic
    losses begin as plain residual norms.
    """
    layers = []
    for i in range(spec.num_layers):
        fan_in = spec.widths[i]
        limit = np.sqrt(6.0 / fan_in)
        w = Tensor(rng.uniform(-limit, limit, size=(fan_in, spec.widths[i + 1])))
        b = Tensor(np.zeros(spec.widths[i + 1]))
        layers.append((w, b))
    sigma_layer = None
    if spec.sigma_head:
        last_hidden = spec.widths[-2]
        sigma_layer = (Tensor(np.zeros((last_hidden, 2))), Tensor(np.zeros(2)))
    return Model(spec, layers, sigma_layer)


def count_parameters(model: Model) -> int:
    return sum(p.data.size for p in model.parameters())


def distillation_rate(teacher: Model, student: Model) -> float:
    """Fraction of teacher parameters removed in the student, in [0, 1)."""
    return 1.0 - count_parameters(student) / count_parameters(teacher)


def weights_fraction(teacher: Model, student: Model) -> float:
    """count(S) / count(T): the 'weights %' companion of distillation_rate."""
    return count_parameters(student) / count_parameters(teacher)


def freeze_below(model: Model, layer_index: int) -> Model:
    """Exclude layers 1..layer_index from subsequent optimizer updates."""
    if not 0 <= layer_index <= model.spec.num_layers:
        raise ConfigError(
            f"freeze_below: index {layer_index} outside [0, {model.spec.num_layers}]"
        )
    model.frozen_below = layer_index
    return model


def check_hint_compatible(teacher: Model, student: Model) -> None:
    """Hint and guided representations must have equal width (no adapters)."""
    tw = teacher.spec.hint_width
    sw = student.spec.hint_width
    if tw != sw:
        raise ConfigError(f"hint width {tw} != guided width {sw}; adapters unsupported")


def save_checkpoint(model: Model, path) -> None:
    """Write spec + parameters to an .npz container; round-trips bit-exactly."""
    arrays = {}
    for i, (w, b) in enumerate(model.layers):
        arrays[f"w{i}"] = w.data
        arrays[f"b{i}"] = b.data
    if model.sigma_layer is not None:
        arrays["sigma_w"] = model.sigma_layer[0].data
        arrays["sigma_b"] = model.sigma_layer[1].data
    arrays["format"] = np.array(CHECKPOINT_FORMAT)
    arrays["spec_json"] = np.array(json.dumps(model.spec.to_dict()))
    arrays["frozen_below"] = np.array(model.frozen_below)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> Model:
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format: {data['format']}")
        spec = MlpSpec.from_dict(json.loads(str(data["spec_json"])))
        layers = [
            (Tensor(data[f"w{i}"]), Tensor(data[f"b{i}"]))
            for i in range(spec.num_layers)
        ]
        sigma_layer = None
        if spec.sigma_head:
            sigma_layer = (Tensor(data["sigma_w"]), Tensor(data["sigma_b"]))
        return Model(spec, layers, sigma_layer, frozen_below=int(data["frozen_below"]))
