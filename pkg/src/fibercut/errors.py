"""Exception types raised across the package."""


class FibercutError(Exception):
    """Base class for all errors raised by fibercut."""


class VolumeFormatError(FibercutError):
    """Header/payload mismatch, unknown layout or non-finite payload."""


class InvalidTensorError(FibercutError):
    """A tensor with a strongly negative eigenvalue."""

    def __init__(self, message, voxel=None):
        super().__init__(message)
        self.voxel = voxel


class TrackingError(FibercutError):
    pass


class NoCenterlineError(TrackingError):
    pass


class DegenerateCenterlineError(TrackingError):
    pass


class DegenerateCutError(FibercutError):
    """The cut lies on a ray extreme, so no boundary point exists there."""

    def __init__(self, message, ray=None):
        super().__init__(message)
        self.ray = ray


class ParityError(FibercutError):
    """Odd number of surface crossings on a voxelization row."""


class PhantomError(FibercutError):
    pass


class ConfigError(FibercutError):
    pass
