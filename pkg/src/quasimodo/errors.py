"""Exception and warning types shared across the package."""


class QuasimodoError(Exception):
    """Base class for all package errors."""


class IntegrationDiverged(QuasimodoError):
    def __init__(self, step, message="non-finite state"):
        self.step = step
        super().__init__(f"integration diverged at step {step}: {message}")


class UnknownSystem(QuasimodoError, KeyError):
    pass


class InvalidParam(QuasimodoError, ValueError):
    pass


class DimensionTooLarge(QuasimodoError, ValueError):
    pass


class ZeroOutsideBox(QuasimodoError, ValueError):
    pass


class SequenceTooShort(QuasimodoError, ValueError):
    pass


class SchemaMismatch(QuasimodoError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientData(QuasimodoError, ValueError):
    def __init__(self, bucket_sizes, required=None, index=None):
        self.bucket_sizes = dict(bucket_sizes)
        self.index = index
        msg = f"insufficient data for control index {index}" if index is not None \
            else "insufficient data"
        if required is not None:
            msg += f" (need >= {required})"
        msg += f"; bucket sizes: {self.bucket_sizes}"
        super().__init__(msg)


class SpectralRadiusZero(QuasimodoError, ValueError):
    pass


class ReservoirNotInitialized(QuasimodoError, RuntimeError):
    pass


class MissingComponent(QuasimodoError, ValueError):
    pass


class BoundViolated(QuasimodoError, AssertionError):
    def __init__(self, step, realized, bound, name="bound"):
        self.step = step
        self.realized = realized
        self.bound = bound
        super().__init__(
            f"{name} violated at step {step}: realized gap {realized:.6g} > bound {bound:.6g}")


class ConfigError(QuasimodoError, ValueError):
    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class MpcAborted(QuasimodoError, RuntimeError):
    """Closed loop stopped early; ``log`` holds the steps completed so far."""

    def __init__(self, step, cause, log=None):
        self.step = step
        self.cause = cause
        self.log = log
        super().__init__(f"closed loop aborted at step {step}: {cause}")


class EmptyBucket(UserWarning):
    pass


class UnderdeterminedFit(UserWarning):
    pass


class RankDeficient(UserWarning):
    pass


class MaxItersReached(UserWarning):
    pass
