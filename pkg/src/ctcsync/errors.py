"""Exception types shared across the package.

Invalid inputs raise ``ValueError`` (or a subclass); failures of a numerical
routine on valid input raise :class:`NumericalError`.
"""
from __future__ import annotations


class NumericalError(RuntimeError):
    """A numerical routine failed on otherwise valid input."""


class SpectrumError(NumericalError):
    pass


class IntegrationError(NumericalError):
    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class ToleranceError(NumericalError):
    pass


class LyapunovError(NumericalError):
    pass


class BlockTooLargeError(ValueError):
    """A superoperator block exceeds the configured size cap."""
