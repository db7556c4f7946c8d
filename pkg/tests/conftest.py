import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stable_cascade(rng, p, margin=0.05):
    """Stable cascade coefficients drawn uniformly from the shrunken triangle."""
    from wienerrom.core import CascadeCoefficients, triangle_contains

    pairs = []
    for _ in range(p // 2):
        while True:
            a, b = rng.uniform(-2, 2), rng.uniform(-1, 1)
            if triangle_contains(a, b, margin):
                pairs.append((a, b))
                break
    linear = rng.uniform(-1 + margin, 1 - margin) if p % 2 else None
    return CascadeCoefficients(tuple(pairs), linear)


SYN_WEIGHTS = np.array([[0.087, -0.065, 0.018, 0.2, 0.15, 0.087],
                        [-0.161, 0.101, 0.061, 0.01, -0.113, -0.032],
                        [2.8, 0, -2.8, 0.72, 0, 0]], dtype=complex)
SYN_CASCADE = ((-0.18, -0.1),)


def synthetic_model():
    """Bounded chaotic test model: d=2, p=r=2, Psi = lagged states plus x1*x2 per row."""
    from wienerrom.core import CascadeCoefficients, CascadeModel, ModelOrders
    from wienerrom.predictors import BasisSpec

    return CascadeModel(ModelOrders(2, 2), CascadeCoefficients(SYN_CASCADE), SYN_WEIGHTS,
                        BasisSpec("poly", 2), 2, 6)


def synthetic_data(n=20000, noise=3e-4, seed=1, burn=2000):
    from wienerrom.sim import closed_loop

    model = synthetic_model()
    rng = np.random.default_rng(seed)
    xi = noise * rng.standard_normal((n + burn, 2))
    path = closed_loop(model, np.full((3, 2), 0.3 + 0j), n + burn, xi, bound=1e3)
    return model, path[burn:]
