"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: parameter/config problems exit
with 1, data problems with 2, numerical divergence with 3.
"""

from __future__ import annotations


class EEGSSLError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(EEGSSLError):
    """An argument or configuration value is out of its valid domain."""


class ConfigError(ParameterError):
    """A config file failed schema validation; message carries the field path."""


class ShapeError(ParameterError):
    """An array has the wrong shape for the requested operation."""


class DataError(EEGSSLError):
    """Input data is unusable (empty corpus, empty eval set, ...)."""


class SplitError(DataError):
    """A cross-validation fold is degenerate, e.g. a class is missing."""


class FormatError(DataError):
    """A recording file does not follow the documented container format."""


class IntegrityError(DataError):
    """A recording file is internally inconsistent (truncation, bad counts)."""


class MissingChannelError(DataError):
    """Requested channel labels are absent from a recording."""

    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        super().__init__(f"channels not present in recording: {', '.join(self.missing)}")


class MontageError(DataError):
    """A channel label has no known electrode position."""


class DegenerateChannelError(DataError):
    """A channel has zero variance where a spread is required."""

    def __init__(self, channel: str):
        self.channel = channel
        super().__init__(f"channel {channel!r} has zero variance")


class DegenerateInputError(DataError):
    """A loss input violates its non-degeneracy precondition (zero-norm channel)."""


class DivergenceError(EEGSSLError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")
