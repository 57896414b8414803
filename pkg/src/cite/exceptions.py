"""Exception types shared across the package."""

from __future__ import annotations


class CiteError(Exception):
    """Base class for all errors raised by this package."""


class CycleDetected(CiteError, ValueError):
    """The given edge set contains a directed cycle."""


class IndexOutOfRange(CiteError, ValueError):
    """A node index falls outside [0, p)."""


class TargetOutOfRange(CiteError, ValueError):
    """An intervention target is not a valid node."""


class SingularSubmatrix(CiteError, ValueError):
    """A principal submatrix inversion failed numerically."""


class SingularGammaBlock(CiteError, ValueError):
    """The support block of the Kronecker matrix is not invertible."""


class TooLarge(CiteError, ValueError):
    """An exhaustive enumeration was requested on an instance too big for it."""


class DimensionMismatch(CiteError, ValueError):
    """Matrix or data dimensions are inconsistent."""


class NonFiniteInput(CiteError, ValueError):
    """An input matrix contains NaN or infinite entries."""


class ClassTooLarge(CiteError, ValueError):
    """An equivalence class exceeds the subset-enumeration budget."""


class CacheIncomplete(CiteError, RuntimeError):
    """A decision needed a cached precision difference that is missing."""


class SkeletonMismatch(CiteError, ValueError):
    """An estimated edge's endpoints are not adjacent in the given skeleton."""


class EstimationStageError(CiteError, RuntimeError):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class ParseError(CiteError, ValueError):
    """A data file could not be parsed; carries row/column location."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        loc = ""
        if row is not None:
            loc = f" at row {row}" + (f", column {col}" if col is not None else "")
        super().__init__(message + loc)
        self.row = row
        self.col = col


class RaggedRows(ParseError):
    """A CSV row has a different number of fields than the first data row."""


class NonNumericCell(ParseError):
    """A CSV cell could not be interpreted as a number."""
