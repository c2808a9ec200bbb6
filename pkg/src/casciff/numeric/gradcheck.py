"""Central-difference gradient verification."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as T
from .autograd import NumericError, Parameter, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    excluded_kinks: int = 0


@contextlib.contextmanager
def _record_relu_inputs():
    seen: list[np.ndarray] = []
    T._relu_observers.append(lambda x: seen.append(x.copy()))
    try:
        yield seen
    finally:
        T._relu_observers.pop()


def _near_kink(base: list[np.ndarray], other: list[np.ndarray], tol: float) -> bool:
    for b, o in zip(base, other):
        if b.shape != o.shape:
            return True
        moved = b != o
        if not moved.any():
            continue
        if ((b > 0) != (o > 0)).any():
            return True
        if (np.abs(b[moved]) < tol).any():
            return True
    return False


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    Every coordinate of every parameter is checked unless ``max_coords`` is
    given, in which case a seeded random subset of that many coordinates per
    parameter is used (never fewer than 200 unless the parameter is smaller).
    Coordinates whose perturbation moves a relu input that sits within
    ``10 * eps`` of zero, or flips its sign, are excluded as kinks.
    """
    for p in params:
        p.zero_grad()
    with _record_relu_inputs() as base_pre:
        loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss in grad_check")
    T.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    rng = np.random.default_rng(seed)
    result = GradCheckResult(max_rel_error=0.0)
    tol = 10.0 * eps
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max(max_coords, 200):
            coords = np.sort(rng.choice(n, size=max(max_coords, 200), replace=False))
        else:
            coords = np.arange(n)
        worst = 0.0
        ga = analytic[p.name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            with _record_relu_inputs() as pre_plus:
                f_plus = loss_fn().item()
            flat[c] = orig - eps
            with _record_relu_inputs() as pre_minus:
                f_minus = loss_fn().item()
            flat[c] = orig
            if _near_kink(base_pre, pre_plus, tol) or _near_kink(base_pre, pre_minus, tol):
                result.excluded_kinks += 1
                continue
            num = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, rel_error(float(ga[c]), num))
            result.checked += 1
        result.per_param[p.name] = worst
        result.max_rel_error = max(result.max_rel_error, worst)
    return result
