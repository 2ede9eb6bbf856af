"""Matrix Lie algebras, their nearest-point projections and group tests.

Supported families (all real):

========  =====================================  ===========================
family    algebra                                defining relation
========  =====================================  ===========================
GL        gl(m)                                  none
SO        so(m)                                  A^T + A = 0
SP        Lie algebra preserving J               A^T J + J A = 0
SE2       se(2), m = 3                           skew 2x2 block, zero last row
LORENTZ   so(m-1, 1)                             A^T eta + eta A = 0
========  =====================================  ===========================

with ``J = [[0, I], [I, 0]]`` and ``eta = diag(1, ..., 1, -1)``.
"""

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConstraintViolation, InvalidArgument

LOAD_ACCEPT_TOL = 1e-9
LOAD_REPROJECT_TOL = 1e-6
WEIGHTS_TOL = 1e-12


class Family(str, enum.Enum):
    GL = "GL"
    SO = "SO"
    SE2 = "SE2"
    SP = "SP"
    LORENTZ = "LORENTZ"


@dataclass(frozen=True)
class AlgebraSpec:
    family: Family
    order: int

    def __post_init__(self):
        try:
            fam = Family(str(getattr(self.family, "value", self.family)).upper())
        except ValueError:
            raise InvalidArgument(f"unknown algebra family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        if int(self.order) != self.order or self.order < 1:
            raise InvalidArgument(f"order must be a positive integer, got {self.order}")
        object.__setattr__(self, "order", int(self.order))
        if fam is Family.SP and self.order % 2:
            raise InvalidArgument("SP requires an even order")
        if fam is Family.SE2 and self.order != 3:
            raise InvalidArgument("SE2 requires order 3")
        if fam is Family.LORENTZ and self.order < 2:
            raise InvalidArgument("LORENTZ requires order >= 2")

    @property
    def J(self):
        h = self.order // 2
        eye = np.eye(h)
        zero = np.zeros((h, h))
        return np.block([[zero, eye], [eye, zero]])

    @property
    def eta(self):
        diag = np.ones(self.order)
        diag[-1] = -1.0
        return np.diag(diag)

    def bilinear_form(self):
        """Matrix ``B`` with ``Z^T B Z = B`` on the group (SP, LORENTZ, SO)."""
        if self.family is Family.SP:
            return self.J
        if self.family is Family.LORENTZ:
            return self.eta
        if self.family is Family.SO:
            return np.eye(self.order)
        return None

    @cached_property
    def basis(self):
        """Hilbert-Schmidt orthonormal basis of the algebra, shape ``(k, m, m)``."""
        m = self.order
        units = np.eye(m * m).reshape(m * m, m, m)
        proj = project(self, units).reshape(m * m, m * m)
        _, sv, vt = np.linalg.svd(proj)
        rank = int(np.sum(sv > 1e-10))
        return vt[:rank].reshape(rank, m, m)

    @property
    def dim(self):
        return self.basis.shape[0]


def _check_order(spec, A):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-2:] != (spec.order, spec.order):
        raise InvalidArgument(
            f"expected trailing shape ({spec.order}, {spec.order}), got {A.shape}"
        )
    return A


def _T(A):
    return np.swapaxes(A, -1, -2)


def project(spec, A):
    """Orthogonal projection onto the algebra in the Hilbert-Schmidt metric."""
    A = _check_order(spec, A)
    fam = spec.family
    if fam is Family.GL:
        return A.copy()
    if fam is Family.SO:
        return (A - _T(A)) / 2
    if fam is Family.SP:
        J = spec.J
        return (A - J @ _T(A) @ J) / 2
    if fam is Family.LORENTZ:
        eta = spec.eta
        return (A - eta @ _T(A) @ eta) / 2
    # SE2: linear subspace spanned by the rotation generator and the translations
    out = np.zeros_like(A)
    skew = (A[..., :2, :2] - _T(A[..., :2, :2])) / 2
    out[..., :2, :2] = skew
    out[..., :2, 2] = A[..., :2, 2]
    return out


def algebra_residual(spec, A):
    """Frobenius norm of the defining relation, per matrix."""
    A = _check_order(spec, A)
    fam = spec.family
    if fam is Family.GL:
        return np.zeros(A.shape[:-2])
    if fam is Family.SO:
        R = _T(A) + A
    elif fam is Family.SP:
        J = spec.J
        R = _T(A) @ J + J @ A
    elif fam is Family.LORENTZ:
        eta = spec.eta
        R = _T(A) @ eta + eta @ A
    else:
        R = np.concatenate(
            [
                (A[..., :2, :2] + _T(A[..., :2, :2])).reshape(A.shape[:-2] + (4,)),
                A[..., 2, :],
            ],
            axis=-1,
        )
        return np.linalg.norm(R, axis=-1)
    return np.linalg.norm(R, axis=(-2, -1))


def in_algebra(spec, A, tol=1e-10):
    try:
        res = algebra_residual(spec, A)
    except InvalidArgument:
        return False
    return bool(np.all(res < tol))


def group_residual(spec, Z):
    """How far ``Z`` is from the group, as a Frobenius norm per matrix.

    For GL this is 0 whenever ``Z`` is invertible; use :func:`in_group`.
    """
    Z = _check_order(spec, Z)
    fam = spec.family
    if fam is Family.GL:
        return np.zeros(Z.shape[:-2])
    if fam is Family.SE2:
        R = Z[..., :2, :2]
        rot = np.linalg.norm(_T(R) @ R - np.eye(2), axis=(-2, -1))
        row = np.linalg.norm(Z[..., 2, :] - np.array([0.0, 0.0, 1.0]), axis=-1)
        return np.maximum(rot, row)
    B = spec.bilinear_form()
    return np.linalg.norm(_T(Z) @ B @ Z - B, axis=(-2, -1))


def in_group(spec, Z, tol=1e-9):
    try:
        Z = _check_order(spec, Z)
    except InvalidArgument:
        return False
    if not np.all(np.isfinite(Z)):
        return False
    fam = spec.family
    if fam is Family.GL:
        return bool(np.all(np.abs(np.linalg.det(Z)) > tol))
    if not np.all(group_residual(spec, Z) < tol):
        return False
    if fam is Family.SO:
        return bool(np.all(np.linalg.det(Z) > 0))
    if fam is Family.SE2:
        return bool(np.all(np.linalg.det(Z[..., :2, :2]) > 0))
    return True


@dataclass(frozen=True, eq=False)
class DevWeights:
    """Trainable coefficients ``theta = (theta_1, ..., theta_d)`` in the algebra."""

    spec: AlgebraSpec
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        m = self.spec.order
        if theta.ndim != 3 or theta.shape[1:] != (m, m) or theta.shape[0] < 1:
            raise InvalidArgument(f"theta must have shape (d, {m}, {m}), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise InvalidArgument("theta contains non-finite entries")
        res = algebra_residual(self.spec, theta)
        if np.any(res > WEIGHTS_TOL * max(1.0, float(np.abs(theta).max()))):
            raise ConstraintViolation(
                f"theta is not in {self.spec.family.value}(m={m}): residual {res.max():.3g}"
            )
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def dim_in(self):
        return self.theta.shape[0]

    @property
    def order(self):
        return self.spec.order

    def replace_theta(self, theta):
        return DevWeights(self.spec, theta)

    def to_dict(self):
        return {
            "family": self.spec.family.value,
            "order": self.spec.order,
            "dim_in": self.dim_in,
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            spec = AlgebraSpec(doc["family"], doc["order"])
            theta = np.asarray(doc["theta"], dtype=float)
            dim_in = int(doc["dim_in"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"malformed weights document: {exc}") from None
        if theta.ndim != 3 or theta.shape[0] != dim_in:
            raise InvalidArgument(f"theta shape {theta.shape} does not match dim_in={dim_in}")
        res = float(np.max(algebra_residual(spec, theta)))
        if res > LOAD_REPROJECT_TOL:
            raise ConstraintViolation(
                f"weights violate the {spec.family.value} algebra relation (residual {res:.3g})"
            )
        if res > 0:
            # within LOAD_ACCEPT_TOL this only strips rounding noise
            theta = project(spec, theta)
        return cls(spec, theta)

    def dumps(self):
        # json writes floats with repr, the shortest round-trip form
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"weights file is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


def embed_linear(weights, v):
    """``M_theta(v) = sum_j theta_j v_j``; ``v`` may carry leading batch axes."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (weights.dim_in,):
        raise InvalidArgument(f"expected vectors of length {weights.dim_in}, got {v.shape}")
    return np.tensordot(v, weights.theta, axes=([-1], [0]))


def random_init(spec, d, scale=1.0, seed=0):
    """Gaussian entries with std ``scale / sqrt(m d)``, projected onto the algebra."""
    if not isinstance(spec, AlgebraSpec):
        raise InvalidArgument(f"expected an AlgebraSpec, got {spec!r}")
    if int(d) != d or d < 1:
        raise InvalidArgument(f"d must be a positive integer, got {d}")
    if scale < 0:
        raise InvalidArgument("scale must be non-negative")
    m = spec.order
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, 1.0, size=(int(d), m, m)) * (scale / np.sqrt(m * d))
    return DevWeights(spec, project(spec, raw))


SE2_SPEC = AlgebraSpec(Family.SE2, 3)


def apply_se2(T, p, tol=1e-9):
    """Act on a planar point: rotate by the top-left block, then translate."""
    T = np.asarray(T, dtype=float)
    p = np.asarray(p, dtype=float)
    if T.shape != (3, 3) or p.shape != (2,):
        raise InvalidArgument(f"expected a 3x3 matrix and a 2-vector, got {T.shape}, {p.shape}")
    if not in_group(SE2_SPEC, T, tol):
        raise InvalidArgument("T is not in SE(2)")
    return T[:2, :2] @ p + T[:2, 2]
