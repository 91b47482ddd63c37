"""Exception hierarchy shared across the pipeline."""


class LaserlocError(Exception):
    """Base class for all errors raised by this package."""


class ImageFormatError(LaserlocError):
    """File is not a supported lossless 8-bit image."""


class ParameterError(LaserlocError, ValueError):
    """Invalid algorithm parameters or precondition violation."""


class EmptyLineError(LaserlocError):
    """No laser pixels survived extraction."""


class FitError(LaserlocError):
    """Too few centerline rows to fit a curve."""


class GeometryError(LaserlocError):
    """Degenerate or physically invalid triangulation."""


class DegenerateGeometryError(GeometryError):
    """Viewing ray nearly parallel to the laser plane."""


class BehindCameraError(GeometryError):
    """Triangulated point has non-positive depth."""


class OutOfRangeError(LaserlocError):
    """Target cannot be reached by any slide stop."""


class LocalizationError(LaserlocError):
    """Every scan stop failed."""


class EvaluationError(LaserlocError):
    """Prediction and ground truth share no rows."""
