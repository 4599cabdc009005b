"""Exception hierarchy shared by all modules."""


class MRFError(Exception):
    """Base class for library errors."""


class DomainError(MRFError, ValueError):
    """Invalid argument value or shape."""


class CapacityError(MRFError):
    """Problem too large for the requested exact method."""


class NumericalError(MRFError, ArithmeticError):
    """Non-finite value or failed numerical procedure."""


class RankDeficiencyError(NumericalError):
    """Singular matrix; ``coords`` names the offending coordinates."""

    def __init__(self, message, coords=()):
        super().__init__(message)
        self.coords = tuple(coords)


class InsufficientFeaturesError(DomainError):
    """Fewer eligible sites than requested biomarkers."""
