"""Exception hierarchy shared by all fastslow modules."""


class FastSlowError(Exception):
    """Base class for every error raised by the package."""


class ConfigInvalid(FastSlowError):
    pass


class DomainMismatch(FastSlowError):
    pass


class FieldError(FastSlowError):
    """A scalar field violates positivity, bounds, or lacks derivatives."""


class GradientUnavailable(FieldError):
    pass


class StabilityViolation(FastSlowError):
    """The symmetric part of A is not positive definite somewhere on the grid."""


class UnstableA(FastSlowError):
    pass


class SingularA(FastSlowError):
    pass


class SolveFailure(FastSlowError):
    pass


class InvalidGrid(FastSlowError):
    pass


class GridMismatch(FastSlowError):
    pass


class StepUnstable(FastSlowError):
    pass


class InsufficientPaths(FastSlowError):
    pass


class OutOfRange(FastSlowError):
    pass


class BoundaryUnsupported(FastSlowError):
    pass


class FieldMismatch(FastSlowError):
    pass


class NonConvergedLinearSolve(FastSlowError):
    pass
