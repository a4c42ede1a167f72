"""Exception types shared across the package."""


class DeformsegError(Exception):
    """Base class for all package errors."""


class DimensionError(DeformsegError, ValueError):
    """Shapes or extents are incompatible with an operation."""


class ContractError(DeformsegError, ValueError):
    """A call violated an API precondition (e.g. non-scalar backward seed)."""


class ConfigError(DeformsegError, ValueError):
    """A configuration value is invalid or inconsistent."""


class CheckpointFormatError(DeformsegError, ValueError):
    """A checkpoint file is malformed; the message includes the byte offset."""


class MetricUndefinedError(DeformsegError, ValueError):
    """A metric is undefined for the given inputs (e.g. empty mask for HD95)."""


class TrainingDivergedError(DeformsegError, RuntimeError):
    """Training produced a non-finite loss; the message names the step."""
