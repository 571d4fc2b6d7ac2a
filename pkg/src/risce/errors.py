"""Package exceptions."""

__all__ = ["IdentifiabilityError", "PeakCountError"]


class IdentifiabilityError(ValueError):
    """A model or linear system is (numerically) unidentifiable."""


class PeakCountError(RuntimeError):
    """Fewer spectral peaks were found than the requested model order."""
