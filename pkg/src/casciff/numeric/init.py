from __future__ import annotations

import numpy as np

from .autograd import Parameter


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; identical across platforms for a given seed."""
    return np.random.Generator(np.random.Philox(seed))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Parameter:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name)


def zeros(shape, name: str) -> Parameter:
    return Parameter(np.zeros(shape), name)


def ones(shape, name: str) -> Parameter:
    return Parameter(np.ones(shape), name)


def constant(shape, value: float, name: str) -> Parameter:
    return Parameter(np.full(shape, float(value)), name)
