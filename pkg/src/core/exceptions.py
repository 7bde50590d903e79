"""
Exception hierarchy shared by every layer of the engine.

The CLI maps each family to a process exit code (see src/main.py), so library code
raises these instead of calling sys.exit.
"""


class HighlightTTAError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HighlightTTAError):
    """Invalid configuration file, override or CLI contract violation."""


class UsageError(HighlightTTAError):
    """Malformed command line (unknown subcommand, bad flag)."""


class DimensionError(HighlightTTAError, ValueError):
    """Array shapes do not agree."""


class NumericError(HighlightTTAError, ArithmeticError):
    """NaN/inf values or an operation outside its numeric domain."""


class ContractError(HighlightTTAError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DataValidationError(HighlightTTAError, ValueError):
    """A FeatureSequence or Dataset holds inconsistent or invalid contents."""


class MetricError(HighlightTTAError, ValueError):
    """A metric is undefined for the given input."""


class AvhfFormatError(HighlightTTAError, ValueError):
    """Base class for AVHF feature file errors."""


class AvhfMagicError(AvhfFormatError):
    """The file does not start with the AVHF magic bytes."""


class AvhfTruncatedError(AvhfFormatError):
    """The file ends before the declared payload does (or carries trailing bytes)."""


class AvhfDimensionError(AvhfFormatError):
    """Manifest dimensions are inconsistent."""


class AvhfManifestError(AvhfFormatError):
    """The manifest cannot be decoded or is missing required fields."""


class AvhfPayloadError(AvhfFormatError):
    """The payload decodes but holds invalid values (non-finite, targets outside [0,1])."""
