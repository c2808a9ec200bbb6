"""Dense float64 tensors with reverse-mode gradients.

Each op computes its forward value with numpy and records a closure that maps
the output gradient to gradients of its inputs.  ``backward`` walks the
recorded graph in reverse topological order and accumulates into the ``grad``
field of every reachable :class:`Parameter`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


# Observers notified with every relu pre-activation (used by grad_check).
_relu_observers: list[Callable[[np.ndarray], None]] = []


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite output from {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward=None, op: str = "const"):
        self.data = _as_array(data)
        live = tuple(p for p in parents if p.requires_grad)
        self.requires_grad = bool(live)
        if self.requires_grad:
            self._parents = tuple(parents)
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None
        self._op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """A leaf tensor that receives gradients."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name: str):
        super().__init__(data)
        self.requires_grad = True
        self.name = name
        self.grad: np.ndarray | None = None

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op: str) -> Tensor:
    data = _as_array(data)
    _check_finite(data, op)
    return Tensor(data, parents, backward, op)


# elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product (numpy broadcasting)."""
    a, b = tensor(a), tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def add_bias(x, b) -> Tensor:
    x, b = tensor(x), tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: input {x.shape} vs bias {b.shape}")
    return add(x, b)


def relu(x) -> Tensor:
    x = tensor(x)
    for obs in _relu_observers:
        obs(x.data)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    x = tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def square(x) -> Tensor:
    x = tensor(x)
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,), "square")


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), bw, "softmax")


def log_softmax(x) -> Tensor:
    x = tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


# linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; either side may carry leading batch dimensions.

    A 1-D operand is promoted to a row (left) or column (right) vector and
    the added axis is dropped from the result.
    """
    a, b = tensor(a), tensor(b)
    if a.ndim == 1 and b.ndim >= 2:
        if a.shape[0] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1 and a.ndim >= 2:
        if a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return _make(out, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


# structural --------------------------------------------------------------


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(x.shape) for x in xs)) from None
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(out, xs, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def split(x, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    x = tensor(x)
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis of shape {x.shape}")
    out, start = [], 0
    ax = axis % x.ndim
    for n in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + n)
        out.append(take(x, tuple(idx)))
        start += n
    return out


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [tensor(x) for x in xs]
    try:
        out = np.stack([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("stack: incompatible shapes " + ", ".join(str(x.shape) for x in xs)) from None
    n = len(xs)
    return _make(out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def take(x, idx) -> Tensor:
    """Basic or advanced indexing; gradients scatter back with ``np.add.at``."""
    x = tensor(x)
    out = x.data[idx]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), (x,), bw, "take")


def reshape(x, shape) -> Tensor:
    x = tensor(x)
    orig = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),), "reshape")


def transpose(x) -> Tensor:
    x = tensor(x)
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


# reductions --------------------------------------------------------------


def sum_(x, axis=None) -> Tensor:
    x = tensor(x)
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), bw, "sum")


def mean(x, axis=None) -> Tensor:
    x = tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / n)


def mean_pool(x, mask=None) -> Tensor:
    """Mean over the second-to-last axis (rows), optionally over masked rows only.

    ``mask`` has the shape of ``x`` without its last axis; masked-out rows are
    ignored.  A row set with no live rows pools to zero.
    """
    x = tensor(x)
    if mask is None:
        return mean(x, axis=-2)
    mask = _as_array(mask)
    if mask.shape != x.shape[:-1]:
        raise ShapeError(f"mean_pool: mask {mask.shape} does not match rows of {x.shape}")
    count = np.maximum(mask.sum(axis=-1, keepdims=True), 1.0)
    w = (mask / count)[..., None]
    return sum_(mul(x, w), axis=-2)


# losses ------------------------------------------------------------------


def mse(a, b) -> Tensor:
    """Mean squared error over all elements."""
    a, b = tensor(a), tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    return mean(square(sub(a, b)))


def cross_entropy(p, y) -> Tensor:
    """Mean negative log-likelihood of integer labels ``y`` under row-probabilities ``p``."""
    p = tensor(p)
    y = np.asarray(y, dtype=np.int64)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ShapeError(f"cross_entropy: probabilities {p.shape} vs labels {y.shape}")
    rows = np.arange(len(y))
    picked = p.data[rows, y]
    n = len(y)
    pd = p.data

    def bw(g):
        grad = np.zeros_like(pd)
        grad[rows, y] = -g / (picked * n)
        return (grad,)

    return _make(-np.log(picked).mean(), (p,), bw, "cross_entropy")


def nll_from_logits(logits, y) -> Tensor:
    """Cross-entropy of ``softmax(logits)`` computed in log space."""
    logits = tensor(logits)
    y = np.asarray(y, dtype=np.int64)
    lp = log_softmax(logits)
    return mul(sum_(take(lp, (np.arange(len(y)), y))), -1.0 / len(y))


def sum_of_squares(params: Iterable) -> Tensor:
    terms = [sum_(square(p)) for p in params]
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


# backward ----------------------------------------------------------------


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
