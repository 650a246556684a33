from __future__ import annotations

import numpy as np
import pytest

from provg import numerics


@pytest.fixture
def f64():
    """Run the test body in 64-bit precision mode."""
    with numerics.precision(64):
        yield


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(seed))


def rand_tensor(rng, shape, scale=1.0, requires_grad=True) -> numerics.Tensor:
    return numerics.Tensor(rng.normal(0.0, scale, shape), requires_grad=requires_grad)
