"""Exception types shared across the library."""


class CubefieldError(Exception):
    """Base class for all library errors."""


class ShapeMismatchError(CubefieldError):
    """Tensor shapes incompatible for an operation."""

    def __init__(self, op: str, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}")


class IntervalError(CubefieldError):
    """Invalid interval endpoints (lo > hi, or non-finite)."""


class IntervalDivisionError(CubefieldError):
    """Division by an interval whose closure contains zero."""


class BinvoxFormatError(CubefieldError):
    """Malformed binvox file.

    ``reason`` is one of: "bad-magic", "bad-header", "non-cubic",
    "truncated-rle", "count-mismatch".
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        msg = f"binvox: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DataError(CubefieldError):
    """Invalid input data (bad parameters, mixed resolutions, bad files)."""


class CheckpointError(CubefieldError):
    """Unreadable or incompatible model checkpoint."""


class DivergenceError(CubefieldError):
    """Training loss became non-finite.

    Carries the last parameter snapshot that produced a finite loss so the
    caller can persist it for post-mortem inspection.
    """

    def __init__(self, message: str, last_good=None, epoch: int | None = None):
        self.last_good = last_good
        self.epoch = epoch
        super().__init__(message)
