"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for every toolkit-specific failure."""


class OutOfRangeError(ToolkitError):
    """Queried timestamp lies outside the trajectory's time span."""


class DegenerateError(ToolkitError):
    """Point sets too degenerate (rank < 2) for an unambiguous rigid alignment."""


class FileFormatError(ToolkitError):
    """Base for file-format problems; carries a 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ParseError(FileFormatError):
    pass


class NonMonotonicTimestampsError(FileFormatError):
    pass


class BadQuaternionError(FileFormatError):
    def __init__(self, line: int, norm: float):
        super().__init__(line, f"quaternion norm {norm:.6g} deviates from 1 by more than 1e-3")
        self.norm = norm


class UnsupportedFormatError(ToolkitError):
    """Image file is in a format the reader does not handle."""


class CorruptHeaderError(ToolkitError):
    """Image header or payload is malformed or truncated."""


class EmptySamplesError(ToolkitError):
    """An estimator was given no samples."""


class NoResponseError(ToolkitError):
    """All probe or stream datagrams were lost."""


class SyncTimeoutError(ToolkitError):
    """The synchronization peer did not answer in time."""


class NoOverlapError(ToolkitError):
    """Two time series have no common time span."""


class InsufficientExcitationError(ToolkitError):
    """Rotation spread too small to observe the extrinsic lever arm."""


class InsufficientDataError(ToolkitError):
    """Fewer samples than the operation requires."""


class TooShortError(ToolkitError):
    """Trajectory is too short (in samples or arc length) for the operation."""


class ConstantInputError(ToolkitError):
    """A correlation input has zero variance."""


class BadAxisMapError(ToolkitError):
    """Axis map is not a signed permutation of the sensor axes."""


class TooSmallError(ToolkitError):
    """Image is smaller than the operator's minimum footprint."""


class BadSpecError(ToolkitError):
    """Motion parameters are invalid (bad pattern, rate, or duration)."""
