"""Exception hierarchy shared across the package.

Two broad classes matter for exit-code mapping: data/configuration problems
(bad inputs, bad files, bad geometry) and numerical failures (factorization,
optimization).  Everything derives from EmfieldError so callers can catch
the whole family at once.
"""


class EmfieldError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EmfieldError):
    """Invalid geometry, grid, kernel or mean configuration."""


class ContractError(EmfieldError):
    """An operation was called outside its documented contract."""


class DataError(EmfieldError):
    """Invalid dataset content (lengths, values, duplicates)."""


class ParseError(DataError):
    """Malformed file content; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class DuplicateInputError(DataError):
    """Training inputs contain exactly coincident points."""


class SingularityError(DataError):
    """A field evaluation point coincides with a source image (distance 0)."""


class CorrelationUndefinedError(DataError):
    """Correlation undefined (constant truth); partial report attached.

    The remaining metrics are still computed and available as ``.report``.
    """

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class NumericalError(EmfieldError):
    """Factorization or other linear-algebra failure."""


class OptimizationError(NumericalError):
    """Every optimizer restart failed; traces attached when available."""

    def __init__(self, message, traces=None):
        self.traces = traces or []
        super().__init__(message)


class ProtocolError(EmfieldError):
    """Malformed wire message (bad padding, type tag, or payload size)."""


class UnknownSensorError(EmfieldError):
    """Well-formed reading from a sensor id outside the configured array."""
