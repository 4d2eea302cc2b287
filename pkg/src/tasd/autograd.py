"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Every value is a float64 :class:`numpy.ndarray`.  Operations record a
:class:`Node` on their output holding the parents and a closure that maps the
output gradient to parent gradients.  :func:`backward` replays the graph in
reverse topological order.

The nonlinearity provided is the tanh approximation of GELU.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class Node:
    """A recorded operation: name, input tensors and the gradient closure."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, values, requires_grad: bool = False, node: Optional[Node] = None):
        if node is not None and isinstance(values, np.ndarray) and values.dtype == np.float64:
            arr = values  # freshly computed op output; no copy needed
        else:
            arr = np.array(values, dtype=np.float64)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node = node

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("Tensor division is only defined by a Python scalar")

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self) -> "GradientTape":
        return backward(self)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


_GRAD_ENABLED = True


class no_grad:
    """Context manager that stops graph recording (inference only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev, _GRAD_ENABLED = _GRAD_ENABLED, False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


def _result(values: np.ndarray, op: str, parents: tuple, backward_fn: Callable) -> Tensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(np.asarray(values, dtype=np.float64))
    return Tensor(values, requires_grad=True, node=Node(op, parents, backward_fn))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for tensor of rank {ndim}")
    return axis % ndim


# -- elementwise -------------------------------------------------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return _result(out, "add", (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values - b.values
    except ValueError as exc:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc
    return _result(out, "sub", (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    return _result(out, "mul", (a, b),
                   lambda g: (_unbroadcast(g * b.values, a.shape),
                              _unbroadcast(g * a.values, b.shape)))


def scale(x: ArrayLike, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result(x.values * c, "scale", (x,), lambda g: (g * c,))


def gelu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    v = x.values
    t = np.tanh(_GELU_C * (v + 0.044715 * (v * v * v)))
    out = 0.5 * v * (1.0 + t)

    def back(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return _result(out, "gelu", (x,), back)


def identity(x: ArrayLike) -> Tensor:
    return as_tensor(x)


# -- linear algebra ----------------------------------------------------------
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # fold batch axes into rows: one GEMM instead of a broadcast stack
        a2 = a.values.reshape(-1, a.shape[-1])
        out = (a2 @ b.values).reshape(a.shape[:-1] + (b.shape[-1],))

        def back2(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.values.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _result(out, "matmul", (a, b), back2)
    try:
        out = np.matmul(a.values, b.values)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.values, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.values, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, "matmul", (a, b), back)


# -- shape manipulation ------------------------------------------------------
def reshape(x: ArrayLike, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from exc
    return _result(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: ArrayLike, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(_check_axis(a, x.ndim) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ValueError(f"axes {axes} are not a permutation of rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.values, axes), "transpose", (x,),
                   lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat needs at least one tensor")
    axis = _check_axis(axis, ts[0].ndim)
    try:
        out = np.concatenate([t.values for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(out, "concat", tuple(ts),
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


# -- reductions --------------------------------------------------------------
def sum_(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        return _result(np.asarray(x.values.sum()), "sum", (x,),
                       lambda g: (np.broadcast_to(g, x.shape).copy(),))
    axis = _check_axis(axis, x.ndim)
    return _result(x.values.sum(axis=axis), "sum", (x,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),))


def mean(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
        return _result(np.asarray(x.values.mean()), "mean", (x,),
                       lambda g: (np.broadcast_to(g / n, x.shape).copy(),))
    axis = _check_axis(axis, x.ndim)
    n = x.shape[axis]
    return _result(x.values.mean(axis=axis), "mean", (x,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),))


# -- lookup / normalisation ---------------------------------------------------
def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight`` by integer ``ids``; gradients scatter-add."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.max() if ids.max() >= vocab else ids.min())
        raise IndexError(f"index {bad} out of vocabulary of size {vocab}")

    def back(g):
        gw = np.zeros_like(weight.values)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _result(weight.values[ids], "embedding", (weight,), back)


def layer_norm(x: ArrayLike, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    rstd = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * gamma.values + beta.values

    def back(g):
        dxhat = g * gamma.values
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        return dx, dgamma, dbeta

    return _result(out, "layer_norm", (x, gamma, beta), back)


def softmax(x: ArrayLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` is added to the logits before normalisation; use ``-inf`` to
    exclude positions.  Every row must keep at least one finite entry.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    if np.isnan(x.values).any():
        raise ValueError("softmax input contains NaN")
    z = x.values if mask is None else x.values + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, "softmax", (x,), back)


# -- losses ------------------------------------------------------------------
def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` over valid positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} do not match targets {targets.shape}")
    n_class = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= n_class):
        raise IndexError(f"target index out of vocabulary of size {n_class}")
    valid = np.ones(targets.shape, bool) if mask is None else np.asarray(mask, bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("cross_entropy mask selects no positions")
    z = logits.values - logits.values.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum() / count

    def back(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * (valid[..., None] * (g / count)),)

    return _result(np.asarray(loss), "cross_entropy", (logits,), back)


def mse(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.values - b.values
    n = diff.size
    return _result(np.asarray((diff ** 2).mean()), "mse", (a, b),
                   lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n))


# -- reverse pass ------------------------------------------------------------
@dataclass
class GradientTape:
    """Topologically ordered nodes replayed by :func:`backward`."""

    nodes: list = field(default_factory=list)
    seed: float = 1.0
    visits: Counter = field(default_factory=Counter)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, seed: float = 1.0) -> GradientTape:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Gradients accumulate: calling twice without :meth:`Tensor.zero_grad`
    adds the second pass onto the first.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = GradientTape(seed=seed)
    if not loss.requires_grad:
        return tape
    order = _topological(loss)
    tape.nodes = order
    grads = {id(loss): np.full(loss.shape, seed, dtype=np.float64)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        tape.visits[id(t)] += 1
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.parents, t.node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return tape


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
