"""Exception hierarchy shared across pipeline stages.

The CLI maps these onto exit codes: configuration/validation problems
exit 1, runtime failures exit 2 (see :mod:`teai.cli`).
"""


class TeaiError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(TeaiError):
    """Invalid or incomplete run configuration (missing files, bad specs)."""


class FormatError(TeaiError):
    """An input file does not match the expected layout (e.g. no header)."""


class DataValidationError(TeaiError):
    """Parsed data violates a documented constraint."""


class TransportError(TeaiError):
    """Chat or embedding endpoint still failing after the retry budget."""


class TransientTransportFailure(TransportError):
    """Retryable endpoint failure (HTTP 429/5xx, timeout, connection reset)."""


class ResponseParseError(TeaiError):
    """Model reply does not contain a usable [rating, motivation] list."""


class SimilarityUndefinedError(TeaiError):
    """Motivation embeddings cancel out; cosine-to-centroid is undefined."""
