"""Exception types shared across the package."""


class ConcordanceError(Exception):
    """Base class for all package errors."""


class DataError(ConcordanceError, ValueError):
    """Invalid observation data or domain violation (nonpositive counts, bad shapes)."""


class ConfigurationError(ConcordanceError, ValueError):
    """Invalid prior/model configuration (non-identifiable system, singular precision)."""


class DegenerateConditionalError(ConcordanceError, RuntimeError):
    """A full conditional is degenerate (improper variance prior with all-zero residuals)."""


class SamplerError(ConcordanceError, RuntimeError):
    """A sampler failed at runtime (proposal budget exhausted, repeated envelope escalation)."""


class IngestError(ConcordanceError, ValueError):
    """Malformed input file; message carries file, row and column context."""
