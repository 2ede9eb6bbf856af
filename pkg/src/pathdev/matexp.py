"""Dense matrix exponential and its differential.

All functions accept a single ``(m, m)`` matrix or a stack ``(..., m, m)``
and operate on the trailing two axes.

Two independent routes to the differential are provided:

* :func:`dexp_block_oracle` exponentiates the augmented matrix
  ``[[A, X], [0, A]]`` and reads off the top-right block.
* :func:`dexp_series` sums ``(-ad A)^k / (k+1)! (exp(A) X)``.

:func:`dexp` dispatches to either; the block route is the default.
"""


import numpy as np

from .errors import InvalidArgument

# Scaling target for the Taylor core, measured in the induced 1-norm.
SQUARING_THRESHOLD = 0.5
# 0.5**15 / 15! ~ 2e-17, below double precision.
TAYLOR_DEGREE = 14

SERIES_RTOL = 1e-16
SERIES_MAX_TERMS = 40


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2] or A.shape[-1] < 1:
        raise InvalidArgument(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return A


def norm1(A):
    """Induced 1-norm (max absolute column sum) over the trailing axes."""
    return np.abs(A).sum(axis=-2).max(axis=-1)


def _taylor(A):
    m = A.shape[-1]
    eye = np.eye(m)
    P = eye + A / TAYLOR_DEGREE
    for k in range(TAYLOR_DEGREE - 1, 0, -1):
        P = eye + (A @ P) / k
    return P


def mat_exp(A):
    """Matrix exponential by scaling and squaring around a Taylor core.

    Each matrix in a stack gets its own number of squarings so that small
    matrices are not over-scaled by a large neighbour.
    """
    A = _as_square(A)
    nrm = norm1(A)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(np.maximum(nrm, 1e-300) / SQUARING_THRESHOLD))
    s = np.maximum(s, 0).astype(int)
    scaled = A / np.ldexp(1.0, s)[..., None, None]
    E = _taylor(scaled)
    smax = int(s.max()) if s.size else 0
    if np.ndim(s) == 0:
        for _ in range(smax):
            E = E @ E
        return E
    for i in range(smax):
        todo = (s > i)[..., None, None]
        E = np.where(todo, E @ E, E)
    return E


def _check_pair(A, X):
    A = _as_square(A, "A")
    X = _as_square(X, "X")
    if A.shape[-1] != X.shape[-1]:
        raise InvalidArgument(f"order mismatch: {A.shape} vs {X.shape}")
    return A, X


def dexp_block_oracle(A, X):
    """Differential of exp at ``A`` in direction ``X`` via a 2m x 2m exponential."""
    A, X = _check_pair(A, X)
    A, X = np.broadcast_arrays(A, X)
    m = A.shape[-1]
    big = np.zeros(A.shape[:-2] + (2 * m, 2 * m))
    big[..., :m, :m] = A
    big[..., m:, m:] = A
    big[..., :m, m:] = X
    return mat_exp(big)[..., :m, m:]


def dexp_series(A, X, expA=None):
    """Differential of exp at ``A`` in direction ``X`` via the ad-series.

    Terms are added until the newest term is negligible relative to the
    running sum, with a hard cap of ``SERIES_MAX_TERMS``.
    """
    A, X = _check_pair(A, X)
    if expA is None:
        expA = mat_exp(A)
    term = expA @ X
    total = term.copy()
    for k in range(1, SERIES_MAX_TERMS):
        # (-ad A) applied to the previous unscaled term, then divide by k+1
        term = -(A @ term - term @ A) / (k + 1)
        total = total + term
        tn = np.linalg.norm(term, axis=(-2, -1))
        sn = np.linalg.norm(total, axis=(-2, -1))
        if np.all(tn <= SERIES_RTOL * sn):
            break
    return total


def dexp(A, X, method="block"):
    """Directional derivative ``d/dh exp(A + hX)`` at ``h = 0``."""
    if method == "block":
        return dexp_block_oracle(A, X)
    if method == "series":
        return dexp_series(A, X)
    raise InvalidArgument(f"unknown dexp method {method!r}")
