"""Parameter initialisation keyed by parameter path."""
from __future__ import annotations

import math

import numpy as np

from .rng import Rng64, derive_seed
from .tensor import Tensor, default_dtype


def kaiming_init(shape, fan_in: int, rng: Rng64) -> Tensor:
    """Uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)] drawn from ``rng``."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = math.sqrt(6.0 / fan_in)
    n = int(np.prod(shape))
    u = rng.uniform_block(n)
    return Tensor(((2.0 * u - 1.0) * bound).reshape(shape).astype(default_dtype()))


def kaiming_for(name: str, shape, fan_in: int, seed: int) -> Tensor:
    return kaiming_init(shape, fan_in, Rng64(derive_seed(seed, name)))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()))


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=default_dtype()))
