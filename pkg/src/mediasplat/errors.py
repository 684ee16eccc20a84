"""Exception types raised across the package.

Every class name doubles as the machine-parseable error tag printed by the CLI.
"""


class MediaSplatError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(MediaSplatError, ValueError):
    pass


class BehindCamera(MediaSplatError, ValueError):
    pass


class NonPositiveDepth(MediaSplatError, ValueError):
    pass


class NonUnitDirection(MediaSplatError, ValueError):
    pass


class OutOfRangePosition(MediaSplatError, ValueError):
    pass


class UnknownMode(MediaSplatError, ValueError):
    pass


class DegenerateFit(MediaSplatError, ValueError):
    pass


class EmptyPointCloud(MediaSplatError, ValueError):
    pass


class ZeroMeanRestored(MediaSplatError, ValueError):
    pass


class EmptyDataset(MediaSplatError, ValueError):
    pass


class NonFiniteLoss(MediaSplatError, RuntimeError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"non-finite loss at step {step}" + (f" ({detail})" if detail else ""))


class IoFailure(MediaSplatError, OSError):
    pass


class FormatError(MediaSplatError, ValueError):
    """Malformed file content; ``offset`` is the byte position of the offending token."""

    def __init__(self, message: str, offset: int = 0, path=None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte {offset})")


class MissingReference(MediaSplatError, ValueError):
    """A command needs a reference image or file that the dataset does not provide."""
