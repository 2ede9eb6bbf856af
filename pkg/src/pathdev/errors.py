"""Exception types shared across the package.

The CLI maps each class to a process exit code.
"""


class InvalidArgument(ValueError):
    """Bad shapes, non-finite values or malformed input data."""

    exit_code = 2


class ConstraintViolation(ValueError):
    """A matrix that should lie in a Lie algebra or group does not."""

    exit_code = 3


class ResourceLimit(RuntimeError):
    """A request would allocate beyond the configured size guards."""

    exit_code = 4


class TrainingDiverged(FloatingPointError):
    """Loss became NaN or infinite during training."""

    exit_code = 5
