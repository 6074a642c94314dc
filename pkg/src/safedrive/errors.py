"""Exception and warning types raised across the pipeline."""


class SafeDriveError(Exception):
    """Base class for all pipeline errors."""


class DegenerateProjection(SafeDriveError):
    """Point lies (numerically) on the camera plane; perspective division undefined."""


class DegenerateRays(SafeDriveError):
    """Triangulation rays are (nearly) parallel, e.g. zero baseline."""


class ImageTooSmall(SafeDriveError):
    pass


class InsufficientMatches(SafeDriveError):
    pass


class DegenerateConfiguration(SafeDriveError):
    """Correspondences do not constrain the epipolar model (collinear/coincident)."""


class EpipoleAtInfinity(SafeDriveError):
    """Epipole has no finite pixel position; carries the 2D direction instead."""

    def __init__(self, direction):
        super().__init__(f"epipole at infinity, direction {direction}")
        self.direction = direction


class CheiralityAmbiguous(SafeDriveError):
    pass


class AtEpipole(SafeDriveError):
    """Polar coordinates are undefined at the epipole itself."""


class InvalidThresholds(SafeDriveError):
    pass


class NoCorrespondence(SafeDriveError):
    pass


class InsufficientCorrespondences(SafeDriveError):
    pass


class PoseUnstable(SafeDriveError):
    pass


class ManifestParseError(SafeDriveError):
    def __init__(self, line_number, message):
        super().__init__(f"manifest line {line_number}: {message}")
        self.line_number = line_number


class DuplicateId(SafeDriveError):
    pass


class MissingImage(SafeDriveError):
    pass


class InsufficientCandidates(SafeDriveError):
    pass


class WeakOverlap(SafeDriveError):
    """Second-best candidate shares too few feature matches with the current view."""


class TooFewPoints(SafeDriveError):
    pass


class SpecInvalid(SafeDriveError):
    pass


class PipelineStageError(SafeDriveError):
    """Wraps any error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class LowDispersityWarning(UserWarning):
    """Registered features are too clustered or one-sided for a reliable projection."""


class NarrowBaselineWarning(UserWarning):
    """Selected database pair was taken from nearly the same spot."""
