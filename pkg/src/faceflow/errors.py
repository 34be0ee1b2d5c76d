"""Exception hierarchy shared by every faceflow module."""


class FaceflowError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FaceflowError):
    """Shape or axis mismatch between arrays that must line up."""


class ContractError(FaceflowError):
    """A documented precondition or invariant was violated by the caller."""


class ConfigError(FaceflowError):
    """Invalid, unknown, or inconsistent configuration input."""


class DataError(FaceflowError):
    """Dataset, manifest, or image file problem."""


class CheckpointError(FaceflowError):
    """Checkpoint file cannot be read back safely."""


class MetricError(FaceflowError):
    """An evaluation metric cannot be computed on the given inputs."""


class NumericalError(FaceflowError):
    """Non-finite values appeared where finite math was required."""
