"""Exception types shared across the pipeline."""


class PointMimicError(Exception):
    """Base class for all pipeline errors."""


# --- geometry ---

class DepthNonPositive(PointMimicError):
    """A 3D point lies at or behind a camera's principal plane."""


class DegenerateGeometry(PointMimicError):
    """Triangulation geometry is rank-deficient (e.g. coincident camera centers)."""


class DegenerateConfiguration(PointMimicError):
    """A point set is too degenerate (collinear) for registration."""


class NonUnitInput(PointMimicError):
    """A quaternion argument deviates from unit norm beyond tolerance."""


# --- retarget ---

class MissingKeypoint(PointMimicError):
    """A required named keypoint is absent from a frame or track."""


# --- policy ---

class ShapeMismatch(PointMimicError):
    """Array shapes do not match the expected dimensions."""


class SchemaMismatch(PointMimicError):
    """Keypoint schema of an input does not match the policy's schema."""


class EmptyDataset(PointMimicError):
    """A training dataset contains no samples."""


# --- file formats ---

class CorruptFile(PointMimicError):
    """A file is truncated, unparsable, or fails integrity checks."""


class FormatVersionMismatch(PointMimicError):
    """A file declares a format version this build does not support."""


class SchemaViolation(PointMimicError):
    """A demonstration file violates the format's structural rules."""


class SchemaMismatchAcrossDemos(PointMimicError):
    """Demonstrations in one dataset do not share an identical keypoint schema."""


# --- simulation / control ---

class InvalidSpec(PointMimicError):
    """A task specification is internally inconsistent."""


class PlanningFailed(PointMimicError):
    """The scripted expert could not plan a feasible trajectory."""


class NoCoverage(PointMimicError):
    """No buffered action chunk covers the requested timestep."""
