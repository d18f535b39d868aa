"""Exception hierarchy and the exit codes the command line maps them to."""

from __future__ import annotations


class TimebinError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TimebinError):
    """Bad configuration file, unknown key, or out-of-range value."""


class StreamFormatError(TimebinError):
    """Corrupt, truncated, or non-monotonic timestamp stream file."""


class ClockMismatchError(TimebinError):
    """Two streams with different slot periods or time origins were combined."""


class NumericError(TimebinError):
    """A numeric contract was violated (domain, range, or convergence)."""


class DegenerateFitError(NumericError):
    """Fit is meaningless because the data carry no usable signal."""


class MultimodalDataError(NumericError):
    """A single-peak fit was requested on data with a secondary peak."""


class QuotaError(NumericError):
    """An event quota could not be reached within the slot budget."""


class SaturationWarning(UserWarning):
    """Sustained input rate exceeded a digitizer's rated maximum."""


# Process exit codes used by the CLI, one per error class.
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_SATURATION = 5
