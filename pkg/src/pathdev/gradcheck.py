"""Finite-difference certification of the development backward pass.

The oracle here uses only the forward recursion. Parameters are perturbed
along a Hilbert-Schmidt orthonormal basis of the algebra, so every probe
stays inside the algebra and no projection is involved on the oracle side.
"""

from dataclasses import dataclass

import numpy as np

from .devlayer import LossPartials, develop_backward, develop_forward, forward_arrays
from .liealg import AlgebraSpec, Family, random_init
from .sigpath import TimeSeries, increments

FD_STEP = 1e-5
GRAD_RTOL = 1e-5


@dataclass
class ProbeLoss:
    """``psi(z) = sum_n <C_n, z_n> + quad/2 * |z_N|^2`` with random ``C``.

    In ``last`` mode only ``C_N`` is nonzero.
    """

    coeffs: np.ndarray
    quad: float

    @classmethod
    def random(cls, rng, n_states, m, mode):
        coeffs = rng.normal(size=(n_states, m, m))
        if mode == "last":
            coeffs[:-1] = 0.0
        return cls(coeffs, float(rng.uniform(0.1, 1.0)))

    def __call__(self, states):
        lin = np.einsum("...nij,nij->...", states, self.coeffs)
        last = states[..., -1, :, :]
        return lin + 0.5 * self.quad * np.einsum("...ij,...ij->...", last, last)

    def partials(self, states):
        vals = self.coeffs.copy()
        vals[-1] = vals[-1] + self.quad * states[-1]
        return LossPartials(vals)


def _rel_err(approx, exact):
    scale = np.linalg.norm(exact)
    diff = np.linalg.norm(approx - exact)
    return diff / scale if scale > 1e-12 else diff


def check_theta(weights, x, loss, h=FD_STEP):
    """Relative error between analytic and central-difference theta gradients."""
    basis = weights.spec.basis
    k, m = basis.shape[0], weights.order
    d = weights.dim_in
    dirs = np.zeros((d * k, d, m, m))
    for j in range(d):
        dirs[j * k : (j + 1) * k, j] = basis
    theta = weights.theta
    probes = np.concatenate([theta + h * dirs, theta - h * dirs])
    states, _ = forward_arrays(probes, increments(x))
    vals = loss(states)
    fd = (vals[: d * k] - vals[d * k :]) / (2 * h)

    z = develop_forward(weights, x)
    grad = develop_backward(weights, x, z, loss.partials(z.states)).dtheta
    analytic = np.einsum("pdij,dij->p", dirs, grad)
    return _rel_err(analytic, fd)


def check_input(weights, x, loss, h=FD_STEP):
    """Relative error of the input gradient against central differences."""
    vals = x.values
    n, d = vals.shape
    eye = np.eye(n * d).reshape(n * d, n, d)
    probes = np.concatenate([vals + h * eye, vals - h * eye])
    incr = np.diff(probes, axis=-2)
    states, _ = forward_arrays(weights.theta, incr)
    out = loss(states)
    fd = ((out[: n * d] - out[n * d :]) / (2 * h)).reshape(n, d)

    z = develop_forward(weights, x)
    analytic = develop_backward(weights, x, z, loss.partials(z.states), with_input=True).dinput
    return _rel_err(analytic, fd)


FAMILY_ORDERS = {
    Family.GL: (2, 3, 4, 5, 6),
    Family.SO: (2, 3, 4, 5, 6),
    Family.SE2: (3,),
    Family.SP: (2, 4, 6),
    Family.LORENTZ: (2, 3, 4, 5, 6),
}


def random_config(rng, family=None, order=None, dim=None, length=None, mode=None):
    """Draw one (weights, series, loss, mode) configuration for the sweep."""
    fam = Family(family) if family is not None else list(Family)[rng.integers(len(Family))]
    m = order if order is not None else int(rng.choice(FAMILY_ORDERS[fam]))
    d = dim if dim is not None else int(rng.integers(1, 5))
    N = length if length is not None else int(rng.integers(1, 21))
    mode = mode if mode is not None else ("sequence", "last")[rng.integers(2)]
    spec = AlgebraSpec(fam, m)
    weights = random_init(spec, d, scale=1.0, seed=int(rng.integers(2**31)))
    steps = rng.normal(scale=0.5, size=(N, d))
    x = TimeSeries(np.vstack([np.zeros((1, d)), np.cumsum(steps, axis=0)]))
    loss = ProbeLoss.random(rng, N + 1, m, mode)
    return weights, x, loss, mode


@dataclass
class SweepRecord:
    family: str
    order: int
    dim: int
    length: int
    mode: str
    theta_err: float
    input_err: float


def sweep(trials, seed=0, family=None, order=None, dim=None, length=None, with_input=True):
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(trials):
        weights, x, loss, mode = random_config(rng, family, order, dim, length)
        records.append(
            SweepRecord(
                weights.spec.family.value,
                weights.order,
                weights.dim_in,
                len(x) - 1,
                mode,
                check_theta(weights, x, loss),
                check_input(weights, x, loss) if with_input else float("nan"),
            )
        )
    return records
