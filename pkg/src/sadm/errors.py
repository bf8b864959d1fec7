"""Exception hierarchy shared across the package.

Every error raised by library code derives from SadmError so callers can
catch broadly; the CLI maps subclasses to stable exit codes.
"""


class SadmError(Exception):
    """Base class for all package errors."""


class GeometryError(SadmError, ValueError):
    """Invalid geometric input, e.g. a polygon with fewer than 3 vertices."""


class ShapeError(SadmError, ValueError):
    """Array/tensor dimensions do not satisfy an operation's contract."""


class ParameterError(SadmError, ValueError):
    """A scalar argument is out of its documented range or ordering."""


class DegeneratePartitionError(SadmError, ValueError):
    """A non-empty query group has no matching key group in partitioned attention."""


class DivergenceError(SadmError, RuntimeError):
    """Training produced a non-finite loss; the run must abort."""


class CoverageError(SadmError, ValueError):
    """A class is under-represented for prototype construction."""


class MaskResolutionError(SadmError, ValueError):
    """A benchmark character's mask file could not be resolved or validated."""


class BenchmarkFormatError(SadmError, ValueError):
    """A benchmark suite file failed parsing or invariant validation."""


class CheckpointFormatError(SadmError, ValueError):
    """A checkpoint file is malformed or carries an unsupported version."""
