import numpy as np
import pytest

from powernpe.numerics import rng_stream


class StubRng:
    """Deterministic stand-in for a numpy Generator.

    ``uniform`` returns the midpoint of its interval unless values were
    queued; ``normal`` returns ``loc`` unless values were queued.
    """

    def __init__(self, uniform=None, normal=None):
        self._uniform = list(uniform or [])
        self._normal = list(normal or [])

    def uniform(self, low=0.0, high=1.0, size=None):
        if self._uniform:
            return np.broadcast_to(np.asarray(self._uniform.pop(0), dtype=float), size).copy()
        return np.full(size, 0.5 * (np.asarray(low) + np.asarray(high)))

    def normal(self, loc=0.0, scale=1.0, size=None):
        if self._normal:
            return np.broadcast_to(np.asarray(self._normal.pop(0), dtype=float), size).copy()
        return np.full(size, loc, dtype=float)


@pytest.fixture
def rng():
    return rng_stream(12345)
