"""Exception types raised by the reconstruction pipeline."""


class DescentDemError(Exception):
    """Base class for all package errors."""


class NoConvergenceError(DescentDemError):
    """Newton inversion of the distortion polynomial failed to converge."""


class OutOfFieldError(DescentDemError):
    """Pixel maps to a ray angle beyond the camera's maximum half-angle."""


class InsufficientPixelsError(DescentDemError):
    """A pixel batch was requested from a mask with no valid pixels."""


class DimensionMismatchError(DescentDemError):
    """An embedding or tensor has the wrong dimensionality."""


class NonUnitVectorError(DescentDemError):
    """A direction vector is not unit length."""


class InvalidRangeError(DescentDemError):
    """An interval such as (t_near, t_far) is empty or inverted."""


class NoValidCellsError(DescentDemError):
    """Supervision was requested from a height map with no valid cells."""


class ShapeMismatchError(DescentDemError):
    """Two height maps being compared have different shapes."""


class AllInvalidError(DescentDemError):
    """A height map contains no valid cell to fill from."""


class DataMissingError(DescentDemError):
    """The training dataset is empty or lacks required inputs."""


class NonFiniteLossError(DescentDemError):
    """Training produced a NaN or infinite loss value."""
