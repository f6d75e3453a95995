"""Exception hierarchy shared across the package.

Validation problems (bad configuration, geometric misuse, malformed files)
map to CLI exit code 2; numerical failures (blow-up, ill-conditioned
systems) map to exit code 3.
"""

from __future__ import annotations


class VortexDragError(Exception):
    """Base class for all package errors."""


class ValidationError(VortexDragError):
    """Invalid input: configuration, preconditions, file formats."""

    exit_code = 2


class DomainError(ValidationError):
    """A point or parameter violates the geometric domain."""


class AmbiguousProjectionError(DomainError):
    """Projection onto the wall is not unique.

    Carries the competing candidate boundary points so callers can see
    why the query failed.
    """

    def __init__(self, message: str, candidates: tuple = ()):
        super().__init__(message)
        self.candidates = candidates


class UnsupportedFormatError(ValidationError):
    """File header declares a version or layout this reader cannot parse."""


class NumericalError(VortexDragError):
    """Numerical failure during a solve or time integration."""

    exit_code = 3
