"""Exception types raised across the package.

Everything derives from :class:`KwsError` so callers can catch the whole
family with one clause, and from the matching builtin (ValueError,
OSError, RuntimeError) to stay friendly to generic handlers.  Errors
about malformed data or arguments all sit under :class:`FormatError`.
"""


class KwsError(Exception):
    """Base class for all errors raised by kwspot."""


class IoError(KwsError, OSError):
    """A file could not be read or written."""


class FormatError(KwsError, ValueError):
    """A file exists but its content violates the expected format."""


class RateMismatch(FormatError):
    """Two clips with different sample rates were combined."""


class InvalidScale(FormatError):
    """A gain/volume scale outside the accepted range."""


class TooShort(FormatError):
    """Input has too few samples or frames for the operation."""


class TooLarge(FormatError):
    """Input exceeds a hard size cap (e.g. the brute-force oracle)."""


class DimMismatch(FormatError):
    """Feature matrices with different dimensions were combined."""


class EmptySequence(FormatError):
    """A feature matrix with zero frames was passed to an alignment."""


class EmptyInput(FormatError):
    """An operation that needs at least one item received none."""


class WindowTooSmall(FormatError):
    """Segment-scan window is too small for the template."""


class BandTooNarrow(FormatError):
    """A Sakoe-Chiba band leaves no admissible warping path."""


class DegenerateFeatures(FormatError):
    """Features carry no usable statistics (identically zero)."""


class SilentSignal(FormatError):
    """Clip has zero power, so an SNR target is undefined."""


class SilentRir(FormatError):
    """Room impulse response is identically zero."""


class BudgetExceeded(KwsError, RuntimeError):
    """A phase overran its time budget."""


class LayoutError(KwsError, ValueError):
    """Task directory does not follow the expected layout."""


class SystemCrashed(KwsError, RuntimeError):
    """The system under test failed during initialization."""


class ParseError(FormatError):
    """A prediction/label file line does not match the grammar."""


class DuplicateUtt(ParseError):
    """The same utterance id appeared twice in a prediction/label file."""


class UnknownUttId(KwsError, ValueError):
    """A prediction refers to an utterance id absent from the labels."""


class ZeroDuration(KwsError, ValueError):
    """RTF requested over zero seconds of audio."""
