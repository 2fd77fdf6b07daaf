"""Exception types raised across the package."""


class HopnetError(Exception):
    """Base class for all package errors."""


class DegenerateTriangle(HopnetError, ValueError):
    pass


class DegenerateConfiguration(HopnetError, ValueError):
    pass


class ZeroQuaternion(HopnetError, ValueError):
    pass


class MalformedMesh(HopnetError, ValueError):
    pass


class RankOutOfRange(HopnetError, ValueError):
    pass


class MissingHistory(HopnetError, ValueError):
    pass


class MissingPhysicalParams(HopnetError, ValueError):
    pass


class ShapeMismatch(HopnetError, ValueError):
    pass


class PlacementFailure(HopnetError, RuntimeError):
    pass


class NumericalBlowup(HopnetError, RuntimeError):
    pass


class OutOfRange(HopnetError, IndexError):
    pass


class NonFiniteLoss(HopnetError, RuntimeError):
    def __init__(self, sample_id, value):
        super().__init__(f"non-finite loss {value!r} on sample {sample_id!r}")
        self.sample_id = sample_id
        self.value = value


class LengthMismatch(HopnetError, ValueError):
    pass


class UnknownObject(HopnetError, KeyError):
    pass


class EditOnStatic(HopnetError, ValueError):
    pass


class EmptyDynamicSet(HopnetError, ValueError):
    """Raised when a scene has no dynamic object left to simulate."""


class FormatError(HopnetError, ValueError):
    """Unreadable, corrupt or unsupported-version file."""


class ChecksumMismatch(FormatError):
    pass


class IoError(HopnetError, OSError):
    """A file could not be read or written."""


class ConfigError(HopnetError, ValueError):
    pass


class HorizonClamped(UserWarning):
    """Requested horizon exceeds the available trajectory length."""
