"""Exception types shared across the pipeline.

Every rejection of malformed input or failed external call raises one of
these, so callers can distinguish contract violations from transport
problems without string-matching messages.
"""

from __future__ import annotations


class NarratorError(Exception):
    """Base class for all pipeline errors."""


class SchemaError(NarratorError):
    """Interchange document has a missing, extra, or mistyped field."""


class AlignmentError(NarratorError):
    """Token-level saliency scores do not align 1:1 with node tokens."""


class GraphReferenceError(NarratorError):
    """An edge endpoint, root, or instance id points at a missing node."""


class TransportError(NarratorError):
    """Backend request failed after exhausting retries."""


class BudgetError(NarratorError):
    """Backend request exceeded the configured time budget."""


class BackendRefusal(NarratorError):
    """Backend rejected the request outright (HTTP 4xx or mock contract)."""


class UnsupportedError(NarratorError):
    """Backend cannot satisfy the request (e.g. no token log-probs)."""


class JobFailedError(NarratorError):
    """Remote fine-tune job reported failure."""


class InstanceTooLargeError(NarratorError):
    """Assembled scoring prompt exceeds the configured context budget."""


class DivisionDomainError(NarratorError):
    """Brevity denominator is empty: the ego graph carries no text tokens."""


class ValidationError(NarratorError):
    """Exported dataset file violates the fine-tune record schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class ConfigError(NarratorError):
    """Run configuration file is invalid or references missing paths."""
