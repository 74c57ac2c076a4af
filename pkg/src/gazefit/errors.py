"""Exception hierarchy shared across the toolkit.

Every error raised on a user-facing path derives from GazefitError so the
CLI can report the failing stage and exit nonzero without a traceback.
"""


class GazefitError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(GazefitError):
    """Input file does not match the expected column schema."""


class ParseError(GazefitError):
    """A row or line could not be parsed; message carries the line number."""


class EmptyCorpusError(GazefitError):
    """Filtering or selection removed every data point."""


class ParameterError(GazefitError):
    """An operation was called with out-of-range parameters."""


class AlignmentError(GazefitError):
    """Subword stream cannot be segmented at the requested boundaries."""

    def __init__(self, message: str, segment_index: int | None = None,
                 subword_index: int | None = None):
        super().__init__(message)
        self.segment_index = segment_index
        self.subword_index = subword_index


class DesignError(GazefitError):
    """Regression design construction failed (missing or collinear terms)."""


class FitError(GazefitError):
    """Model fitting failed or an unconverged fit was passed downstream."""
