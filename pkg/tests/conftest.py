"""Shared fixtures: the two benchmark networks and small helpers."""

import numpy as np
import pytest

from qswitch_age import Instance, NetworkConfig, build_request_set
from qswitch_age.sampling import MarginalVector

# 5-user network used throughout the memory sweep
N5_P = (0.85, 0.9, 0.93, 0.87, 0.95)
N5_Q = {2: 0.92, 3: 0.87, 4: 0.83, 5: 0.8}

# 7-user network used for the growing-request-set sweep
N7_P = N5_P + (0.83, 0.92)
N7_Q = {**N5_Q, 6: 0.78, 7: 0.75}


@pytest.fixture(scope="session")
def net5() -> NetworkConfig:
    return NetworkConfig(n_users=5, p=N5_P, q=dict(N5_Q))


@pytest.fixture(scope="session")
def net7() -> NetworkConfig:
    return NetworkConfig(n_users=7, p=N7_P, q=dict(N7_Q))


@pytest.fixture(scope="session")
def bench5(net5):
    """Factory: the 5-user full-request-set instance at a given memory."""

    requests = build_request_set(5, "all")

    def make(memory: int) -> Instance:
        return Instance.build(net5, requests, memory)

    return make


@pytest.fixture(scope="session")
def bench7(net7):
    """Factory: the 7-user instance with requests up to a cardinality cap."""

    def make(max_cardinality: int, memory: int = 20) -> Instance:
        requests = build_request_set(7, "up_to", max_cardinality=max_cardinality)
        return Instance.build(net7, requests, memory)

    return make


def project_capped_simplex(y: np.ndarray, total: float) -> np.ndarray:
    """Shift-and-clip y so the result lies in [0,1]^n and sums to total;
    bisection on the shift (the clipped sum is monotone in it)."""
    lo = -float(np.max(y)) - 1.0
    hi = 1.0 - float(np.min(y))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = float(np.clip(y + mid, 0.0, 1.0).sum())
        if s < total:
            lo = mid
        else:
            hi = mid
    return np.clip(y + 0.5 * (lo + hi), 0.0, 1.0)


def random_marginal_vector(gen: np.random.Generator, n: int, k: int) -> MarginalVector:
    """A random marginal vector: n items, inclusion probabilities in [0,1]
    summing to k."""
    x = project_capped_simplex(gen.uniform(0.0, 1.0, size=n), float(k))
    # absorb the bisection slack into an uncapped coordinate
    gap = k - float(x.sum())
    for i in np.argsort(x):
        xi = x[i] + gap
        if 0.0 <= xi <= 1.0:
            x[i] = xi
            break
    return MarginalVector(items=tuple((i, float(x[i])) for i in range(n)), k=k)
