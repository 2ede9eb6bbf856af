"""Path development layer: forward recursion and reverse-mode gradients.

Forward::

    z_0 = I,   z_n = z_{n-1} exp(M_theta(dx_n)),   dx_n = x_n - x_{n-1}

Backward. Let ``G_n`` be the Euclidean gradient of the loss with respect to
``z_n`` with every later state treated as a function of ``z_n``, and ``P_n``
the explicit partial derivative supplied by the caller. Then::

    G_N     = P_N
    G_{n-1} = P_{n-1} + G_n exp(M_theta(dx_n))^T
    g_n     = dexp_{M_theta(dx_n)^T}(z_{n-1}^T G_n)       # dL/dM at step n
    dtheta_j = Proj( sum_n dx_n[j] g_n )

The transposes appear because ``G`` is stored as a gradient (``dL =
<G, dz>_HS``) rather than as a row covector; with that convention every
formula above is checked against central differences in the test-suite.

The ``*_arrays`` functions take raw numpy arrays with arbitrary leading
batch axes and are what the trainer calls. The remaining functions wrap them
for single series.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .liealg import AlgebraSpec, DevWeights, Family, group_residual, in_group, project
from .matexp import dexp_block_oracle, mat_exp
from .sigpath import TimeSeries, increments

MODES = ("sequence", "last")


def _T(A):
    return np.swapaxes(A, -1, -2)


def step_generators(theta, incr):
    """``M_theta(dx_n)`` for every step: ``(..., N, d)`` x ``(..., d, m, m)``."""
    return np.einsum("...nd,...dij->...nij", incr, theta)


def forward_arrays(theta, incr):
    """Run the recursion on arrays.

    Returns ``(states, step_exps)`` with shapes ``(..., N+1, m, m)`` and
    ``(..., N, m, m)``.
    """
    gens = step_generators(theta, incr)
    exps = mat_exp(gens)
    m = theta.shape[-1]
    N = incr.shape[-2]
    batch = exps.shape[:-3]
    states = np.empty(batch + (N + 1, m, m))
    states[..., 0, :, :] = np.eye(m)
    for n in range(N):
        states[..., n + 1, :, :] = states[..., n, :, :] @ exps[..., n, :, :]
    return states, exps


def adjoint_sweep(exps, partials):
    """Adjoints ``G_0..G_N`` with ``G_N = P_N`` and ``G_{n-1} = P_{n-1} + G_n exp(M_n)^T``.

    ``G_n`` is the total derivative of the loss with respect to ``z_n``.
    Only matmuls happen here; the dexp work is batched by the caller.
    """
    N = exps.shape[-3]
    batch = np.broadcast_shapes(partials.shape[:-3], exps.shape[:-3])
    adj = np.empty(batch + (N + 1,) + partials.shape[-2:])
    G = partials[..., N, :, :]
    adj[..., N, :, :] = G
    for n in range(N, 0, -1):
        G = partials[..., n - 1, :, :] + G @ _T(exps[..., n - 1, :, :])
        adj[..., n - 1, :, :] = G
    return adj


def backward_arrays(theta, incr, states, partials, exps=None):
    """Reverse sweep on arrays.

    Returns ``(dtheta_ambient, dM)`` where ``dM[..., n-1]`` is the gradient
    with respect to the step generator ``M_theta(dx_n)``. ``dtheta_ambient``
    has not been projected onto the algebra.
    """
    gens = step_generators(theta, incr)
    if exps is None:
        exps = mat_exp(gens)
    N = incr.shape[-2]
    adj = adjoint_sweep(exps, partials)
    C = _T(states[..., :N, :, :]) @ adj[..., 1:, :, :]
    dM = dexp_block_oracle(_T(gens), C)
    dtheta = np.einsum("...nd,...nij->...dij", incr, dM)
    return dtheta, dM


def input_gradient_arrays(theta, dM):
    """Gradient with respect to the samples ``x_0..x_N`` given ``dL/dM_n``."""
    g_incr = np.einsum("...nij,...dij->...nd", dM, theta)
    zero = np.zeros(g_incr.shape[:-2] + (1, g_incr.shape[-1]))
    # x_n enters dx_n with + and dx_{n+1} with -
    return np.concatenate([zero, g_incr], axis=-2) - np.concatenate([g_incr, zero], axis=-2)


@dataclass(frozen=True, eq=False)
class DevOutput:
    spec: AlgebraSpec
    states: np.ndarray = field(repr=False)
    mode: str = "sequence"

    @property
    def last(self):
        return self.states[-1]

    @property
    def output(self):
        return self.states if self.mode == "sequence" else self.states[-1]

    def drift(self):
        """Per-step distance from the group; see :func:`pathdev.liealg.group_residual`."""
        return group_residual(self.spec, self.states)

    def check_group(self, rtol=1e-8):
        return all(
            in_group(self.spec, z, rtol * (n + 1)) for n, z in enumerate(self.states)
        )


@dataclass(frozen=True, eq=False)
class LossPartials:
    """Ambient partial derivatives of the loss with respect to each ``z_n``."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise InvalidArgument(f"partials must have shape (N+1, m, m), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("loss partials contain non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def at_last(cls, dz_last, n_states):
        dz_last = np.asarray(dz_last, dtype=float)
        vals = np.zeros((n_states,) + dz_last.shape)
        vals[-1] = dz_last
        return cls(vals)


@dataclass(frozen=True, eq=False)
class GradResult:
    dtheta: np.ndarray = field(repr=False)
    dinput: np.ndarray | None = field(default=None, repr=False)


def _check_series(weights, x):
    if not isinstance(x, TimeSeries):
        x = TimeSeries(x)
    if x.dim != weights.dim_in:
        raise InvalidArgument(f"series has dim {x.dim}, weights expect {weights.dim_in}")
    return x


def develop_forward(weights, x, mode="sequence"):
    if mode not in MODES:
        raise InvalidArgument(f"mode must be one of {MODES}, got {mode!r}")
    x = _check_series(weights, x)
    states, _ = forward_arrays(weights.theta, increments(x))
    return DevOutput(weights.spec, states, mode)


def _backward(weights, x, z, partials):
    x = _check_series(weights, x)
    if not isinstance(partials, LossPartials):
        partials = LossPartials(partials)
    states = z.states if isinstance(z, DevOutput) else np.asarray(z, dtype=float)
    m = weights.order
    if states.shape != (len(x), m, m) or partials.values.shape != states.shape:
        raise InvalidArgument(
            f"shape mismatch: series length {len(x)}, states {states.shape}, "
            f"partials {partials.values.shape}"
        )
    return backward_arrays(weights.theta, increments(x), states, partials.values)


def develop_backward(weights, x, z, partials, with_input=False):
    """Gradient of the loss with respect to ``theta``, projected onto the algebra."""
    dtheta, dM = _backward(weights, x, z, partials)
    dinput = input_gradient_arrays(weights.theta, dM) if with_input else None
    return GradResult(project(weights.spec, dtheta), dinput)


def grad_input(weights, x, z, partials):
    """Gradient of the loss with respect to every sample of ``x``, shape ``(N+1, d)``."""
    _, dM = _backward(weights, x, z, partials)
    return input_gradient_arrays(weights.theta, dM)


HYPERBOLIC_SPEC = AlgebraSpec(Family.LORENTZ, 3)
HYPERBOLIC_WEIGHTS = DevWeights(
    HYPERBOLIC_SPEC,
    np.array(
        [
            [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
        ]
    ),
)


def hyperbolic_develop(x):
    """Trace a planar path onto the hyperboloid ``x1^2 + x2^2 - x3^2 = -1``.

    Returns the points ``z_n o`` with ``o = (0, 0, 1)``, shape ``(N+1, 3)``.
    """
    if not isinstance(x, TimeSeries):
        x = TimeSeries(x)
    if x.dim != 2:
        raise InvalidArgument(f"hyperbolic development needs a 2-d path, got d={x.dim}")
    z = develop_forward(HYPERBOLIC_WEIGHTS, x)
    return z.states[:, :, 2].copy()
