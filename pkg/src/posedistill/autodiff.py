"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and records the operation that produced it.
``backward`` walks the tape in reverse topological order and accumulates
gradients into ``Tensor.grad``. Graphs are rebuilt on every forward pass;
parameters are plain leaf tensors that persist across steps.

Everything is float64. Gradient correctness against finite differences is
the contract the rest of the package is built on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


class Tensor:
    """Node in the computation graph: value, gradient slot, and tape entry."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={not self._parents})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar; constants are promoted to leaf tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return take(self, key)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_finite(name, *tensors):
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError(f"{name}: non-finite input")


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div: zero denominator")
    try:
        out_data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out_data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor(out_data, (a, b), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out_data * out_data))

    return Tensor(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        x._accumulate(g * (x.data > 0.0))

    return Tensor(out_data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data)

    return Tensor(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise FloatingPointError("log: non-positive input")
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return Tensor(out_data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0.0):
        raise FloatingPointError("sqrt: negative input")
    out_data = np.sqrt(x.data)

    def backward(g):
        # derivative blows up at 0; callers guard (norms of nonzero residuals)
        x._accumulate(g * 0.5 / np.maximum(out_data, 1e-300))

    return Tensor(out_data, (x,), backward)


def square(x: Tensor) -> Tensor:
    out_data = x.data * x.data

    def backward(g):
        x._accumulate(g * 2.0 * x.data)

    return Tensor(out_data, (x,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; the gradient follows the smaller branch (ties -> a)."""
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes {a.shape} and {b.shape} differ")
    pick_a = a.data <= b.data
    out_data = np.where(pick_a, a.data, b.data)

    def backward(g):
        a._accumulate(g * pick_a)
        b._accumulate(g * ~pick_a)

    return Tensor(out_data, (a, b), backward)


def take(x: Tensor, key) -> Tensor:
    """Basic slice/index; gradient scatters back into the source shape."""
    out_data = x.data[key]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        x._accumulate(full)

    return Tensor(out_data, (x,), backward)


def sum_(x: Tensor, axis=None) -> Tensor:
    out_data = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return Tensor(out_data, (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    out_data = np.mean(x.data, axis=axis)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g / n, x.data.shape).copy())
        else:
            x._accumulate(
                np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape).copy()
            )

    return Tensor(out_data, (x,), backward)


def mean_squared_error(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(
            f"mean_squared_error: shapes {pred.shape} and {target.shape} differ"
        )
    return mean(square(sub(pred, target)))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Identity in eval mode and at rate 0, so inference never depends on rng.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out_data = x.data * mask

    def backward(g):
        x._accumulate(g * mask)

    return Tensor(out_data, (x,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every node on the tape.

    Call ``zero_grad`` on the parameter list first; unreachable parameters
    then keep their zero gradient (they are independent of the loss).
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus hyperparameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected Adam update, in place, from ``Tensor.grad``."""
    if len(state.m) != len(params):
        raise ShapeError(
            f"adam_step: state tracks {len(state.m)} params, got {len(params)}"
        )
    state.step += 1
    t = state.step
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: grad shape {g.shape} != param shape {p.data.shape}"
            )
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - state.beta1**t)
        v_hat = state.v[i] / (1.0 - state.beta2**t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
