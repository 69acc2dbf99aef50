"""Exception types raised across the package.

Every error derives from :class:`SegError` so callers (the CLI in particular)
can separate data problems from programming errors.
"""


class SegError(Exception):
    """Base class for all package errors."""


class LabelAbsentError(SegError, KeyError):
    def __init__(self, label):
        super().__init__(f"label absent: {label}")
        self.label = label

    def __str__(self):
        return self.args[0]


class EmptyObjectError(SegError, ValueError):
    def __init__(self, msg="empty object"):
        super().__init__(msg)


class InvalidBandwidthError(SegError, ValueError):
    def __init__(self, msg="invalid bandwidth: sigma must be strictly positive"):
        super().__init__(msg)


class ShapeMismatchError(SegError, ValueError):
    pass


class DegenerateDatasetError(SegError, ValueError):
    def __init__(self, msg="degenerate dataset"):
        super().__init__(msg)


class ScheduleExhaustedError(SegError, IndexError):
    pass


class FitDivergedError(SegError, ArithmeticError):
    """Raised when the loss becomes non-finite; ``trace`` holds the history so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


class ShapeNotInvariantError(SegError, ValueError):
    pass


class FormatError(SegError, ValueError):
    """Malformed or unsupported file contents."""


class CropError(SegError, ValueError):
    pass


class PackingError(SegError, RuntimeError):
    pass
