"""Exception hierarchy shared across the package.

CLI exit codes: 0 success, 2 config error, 3 provider error,
4 validation error.
"""

from __future__ import annotations


class VlnaugError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(VlnaugError):
    """Invalid run configuration or unusable option combination."""

    exit_code = 2


class ValidationError(VlnaugError):
    """Input data violates a documented invariant (schema, graph, range)."""

    exit_code = 4


class ProviderError(VlnaugError):
    """A model provider failed after exhausting its retry budget."""

    exit_code = 3

    def __init__(self, message: str, *, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class ProtocolError(ProviderError):
    """Provider returned a structurally invalid response (empty text,
    embedding dimension drift within a session)."""


class ParseError(VlnaugError):
    """A model response did not conform to the demanded output grammar."""

    exit_code = 3


class MetricError(VlnaugError):
    """Navigation metrics could not be computed (e.g. disconnected goal)."""

    exit_code = 4
