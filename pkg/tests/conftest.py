import numpy as np
import pytest


def fd_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array.

    Independent oracle: uses only forward evaluations of f, never the
    engine's backward pass.
    """
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        hi = float(f(x))
        flat[j] = orig - eps
        lo = float(f(x))
        flat[j] = orig
        gflat[j] = (hi - lo) / (2.0 * eps)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |n|), the error metric used across the suite."""
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
