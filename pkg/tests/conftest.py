from math import factorial

import numpy as np
import pytest

from pathdev.devlayer import develop_forward
from pathdev.liealg import AlgebraSpec, random_init
from pathdev.sigpath import TimeSeries, extend_functional, signature

ALL_SPECS = [
    AlgebraSpec("GL", 3),
    AlgebraSpec("SO", 4),
    AlgebraSpec("SE2", 3),
    AlgebraSpec("SP", 4),
    AlgebraSpec("LORENTZ", 4),
]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_with_norm(rng, shape, max_norm):
    """Gaussian matrix rescaled to a Frobenius norm drawn from ``[0, max_norm]``."""
    A = rng.normal(size=shape)
    return A * (rng.uniform(0, max_norm) / np.linalg.norm(A))


def random_walk(rng, n_steps, d, scale=1.0):
    steps = rng.normal(scale=scale, size=(n_steps, d))
    return np.vstack([np.zeros((1, d)), np.cumsum(steps, axis=0)])


def signature_link_errors(rng, family="SO", m=3, Ks=range(1, 7)):
    """Errors of the truncated-signature approximation to the development.

    The path is rescaled so that ``|M| L`` lands in ``[0.2, 1.5]``, where
    ``|M|`` bounds the operator norm of the linear map and ``L`` is the
    1-norm length. Returns the errors and the factorial tail bounds.
    """
    w = random_init(AlgebraSpec(family, m), 2, seed=int(rng.integers(1000)))
    pts = random_walk(rng, int(rng.integers(2, 8)), 2)
    op = max(np.linalg.norm(t, 2) for t in w.theta)
    L = np.abs(np.diff(pts, axis=0)).sum()
    target = rng.uniform(0.2, 1.5)
    pts = pts * (target / (op * L))
    ML = target
    x = TimeSeries(pts)
    dev = develop_forward(w, x).last
    errs = [np.linalg.norm(dev - extend_functional(w, signature(x, K))) for K in Ks]
    bounds = [ML ** (K + 1) * np.exp(ML) / factorial(K + 1) for K in Ks]
    return errs, bounds
