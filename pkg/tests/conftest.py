import numpy as np
import pytest

from sinkbridge.scaling import MarginPair, ScalingProblem, sinkhorn_scale


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jitted Sinkhorn kernel once so timed tests measure math,
    not JIT latency."""
    lam = np.array([[1.0, 2.0], [3.0, 4.0]])
    sinkhorn_scale(ScalingProblem(lam, MarginPair(lam.sum(1), lam.sum(0))), tol=1e-8)


def random_problem(rng, m, n, lo=0.2, hi=2.0):
    """Random positive problem with margins drawn independently of the matrix."""
    lam = rng.uniform(lo, hi, (m, n))
    r = rng.uniform(lo, hi, m)
    c = rng.uniform(lo, hi, n)
    c *= r.sum() / c.sum()
    return ScalingProblem(lam, MarginPair(r, c))
