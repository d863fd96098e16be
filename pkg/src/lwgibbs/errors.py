"""Exception types shared across the package."""


class LwError(Exception):
    """Base class for all lwgibbs errors."""


class DimensionMismatchError(LwError):
    """Operands have incompatible dimensions."""


class NotSymmetricError(LwError):
    """Matrix data is not exactly symmetric."""


class NotPositiveDefiniteError(LwError):
    """Matrix fails a positive-definiteness requirement."""


class DivergenceDetectedError(LwError):
    """Truncated integrals grow without bound; the integral does not exist."""


class BudgetExceededError(LwError):
    """Evaluation budget exhausted before the target accuracy was reached."""


class NoConvergenceError(LwError):
    """Iterative solver exhausted its iteration budget."""


class LeftDomainError(LwError):
    """Line search could not keep the iterate inside the admissible domain."""


class ExtractionUnstableError(LwError):
    """Series fit residual exceeds the declared tolerance."""


class ConfigError(LwError):
    """Malformed configuration or model file."""
