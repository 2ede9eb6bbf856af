"""Discrete time series, truncated path signatures and the canonical extension.

A series ``x_0, ..., x_N`` is read as the piecewise-linear path through its
samples. Timestamps only matter for :func:`add_time`; every other quantity
here is invariant under reparametrisation.

Signature level ``k`` is stored as a flat array of ``d**k`` numbers in
row-major multi-index order, so the first index varies slowest. With that
layout ``np.kron(a, b)`` is the tensor product of two levels.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, ResourceLimit

MAX_DEPTH = 12
MAX_LEVEL_SIZE = 10**6


@dataclass(frozen=True, eq=False)
class TimeSeries:
    values: np.ndarray = field(repr=False)
    timestamps: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgument(f"values must have shape (N+1, d), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("time series contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.timestamps is not None:
            t = np.array(self.timestamps, dtype=float).reshape(-1)
            if t.shape[0] != v.shape[0]:
                raise InvalidArgument("timestamps and values differ in length")
            if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
                raise InvalidArgument("timestamps must be finite and strictly increasing")
            t.setflags(write=False)
            object.__setattr__(self, "timestamps", t)

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    @property
    def times(self):
        if self.timestamps is None:
            return np.arange(len(self), dtype=float)
        return self.timestamps


def increments(x):
    """``x_n - x_{n-1}`` for ``n = 1..N``, shape ``(N, d)``."""
    return np.diff(x.values, axis=0)


def add_time(x):
    """Prepend the time coordinate as channel 0."""
    vals = np.column_stack([x.times, x.values])
    return TimeSeries(vals, x.timestamps)


@dataclass(frozen=True, eq=False)
class TruncSig:
    dim: int
    levels: list = field(repr=False)

    @property
    def depth(self):
        return len(self.levels) - 1

    def flatten(self, include_constant=True):
        start = 0 if include_constant else 1
        return np.concatenate([np.atleast_1d(lv) for lv in self.levels[start:]])

    def level(self, k):
        """Level ``k`` reshaped to a ``(d,) * k`` tensor."""
        return self.levels[k].reshape((self.dim,) * k)


def _guard(d, K):
    if int(K) != K or K < 0:
        raise InvalidArgument(f"depth must be a non-negative integer, got {K}")
    if K > MAX_DEPTH or d**K > MAX_LEVEL_SIZE:
        raise ResourceLimit(f"signature of dim {d} at depth {K} exceeds the size limit")


def unit_sig(d, K):
    levels = [np.ones(1)] + [np.zeros(d**k) for k in range(1, K + 1)]
    return TruncSig(d, levels)


def sig_linear_segment(delta, K):
    """Signature of a straight segment: level ``k`` is ``delta^{(x)k} / k!``."""
    delta = np.asarray(delta, dtype=float).reshape(-1)
    d = delta.shape[0]
    _guard(d, K)
    levels = [np.ones(1)]
    for k in range(1, K + 1):
        levels.append(np.kron(levels[-1], delta) / k)
    return TruncSig(d, levels)


def chen_product(S1, S2, K=None):
    """Truncated tensor product; the signature of the concatenated path."""
    if S1.dim != S2.dim:
        raise InvalidArgument(f"dimension mismatch: {S1.dim} vs {S2.dim}")
    if K is None:
        K = min(S1.depth, S2.depth)
    if K > min(S1.depth, S2.depth):
        raise InvalidArgument("requested depth exceeds the depth of an operand")
    _guard(S1.dim, K)
    levels = []
    for k in range(K + 1):
        acc = np.zeros(S1.dim**k)
        for i in range(k + 1):
            acc += np.kron(S1.levels[i], S2.levels[k - i])
        levels.append(acc)
    return TruncSig(S1.dim, levels)


def signature(x, K):
    """Truncated signature of the piecewise-linear lift of ``x``."""
    _guard(x.dim, K)
    S = unit_sig(x.dim, K)
    for delta in increments(x):
        if not np.any(delta):
            continue
        S = chen_product(S, sig_linear_segment(delta, K), K)
    return S


def sig_dim(d, K, include_constant=True):
    """Number of scalars in a depth-``K`` signature of a ``d``-dim path."""
    if d < 1 or K < 0:
        raise InvalidArgument("need d >= 1 and K >= 0")
    if d == 1:
        total = K + 1
    else:
        total = (d ** (K + 1) - 1) // (d - 1)
    return total if include_constant else total - 1


def extend_functional(weights, S):
    """Apply the algebra homomorphism induced by ``theta`` to a truncated signature.

    Word ``(i_1, ..., i_k)`` maps to ``theta_{i_1} ... theta_{i_k}``; the empty
    word maps to the identity.
    """
    if S.dim != weights.dim_in:
        raise InvalidArgument(f"signature dim {S.dim} != weights dim_in {weights.dim_in}")
    _guard(S.dim, S.depth)
    theta = weights.theta
    m = weights.order
    out = np.eye(m) * S.levels[0][0]
    words = np.eye(m)[None]  # (d**k, m, m) products for every word of length k
    for k in range(1, S.depth + 1):
        words = np.einsum("wab,jbc->wjac", words, theta).reshape(-1, m, m)
        out = out + np.tensordot(S.levels[k], words, axes=(0, 0))
    return out
