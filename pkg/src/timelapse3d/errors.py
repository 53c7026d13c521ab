"""Exception types raised across the reconstruction pipeline."""


class TimelapseError(Exception):
    """Base class for all package errors."""


class BehindCamera(TimelapseError):
    """A 3D point has non-positive depth in the camera frame."""


class NonPositiveDepth(TimelapseError):
    """Backprojection requested at depth <= 0."""


class UnknownPathType(TimelapseError):
    """Camera path spec names an unsupported motion type."""


class EmptySelection(TimelapseError):
    """No input photo passed the camera selection criteria."""


class DegenerateRange(TimelapseError):
    """Too few usable sparse points to bracket a depth range."""


class TooFewImages(TimelapseError):
    """A cost volume needs at least two support images."""


class MissingData(TimelapseError):
    """A pairwise matching sample fell outside one of the source images."""


class OutOfRange(TimelapseError):
    """Continuous disparity outside the plane-index domain [0, L-1]."""


class DimensionMismatch(TimelapseError):
    """Raster or sequence shapes disagree."""


class NoObservations(TimelapseError):
    """A track has no visible color observation in any view."""


class UnderConstrained(TimelapseError):
    """Frame reconstruction has a pixel with (near) zero sample weight mass."""


class InvalidSpec(TimelapseError):
    """Synthetic scene spec violates its invariants."""


class PipelineStageError(TimelapseError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
