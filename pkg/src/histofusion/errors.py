"""Exception hierarchy shared across the package."""


class HistoFusionError(Exception):
    """Base class for all package errors."""


class DimensionError(HistoFusionError, ValueError):
    pass


class ConfigurationError(HistoFusionError, ValueError):
    pass


class UsageError(HistoFusionError, RuntimeError):
    pass


class NumericalError(HistoFusionError, FloatingPointError):
    """A NaN or Inf appeared where all values must be finite."""


class ParameterError(HistoFusionError, ValueError):
    pass


class InputError(HistoFusionError, ValueError):
    pass


class RangeError(HistoFusionError, ValueError):
    pass


class ImageIOError(HistoFusionError, OSError):
    pass


class ManifestError(HistoFusionError, ValueError):
    pass


class CheckpointError(HistoFusionError):
    """Base class for checkpoint decoding failures."""


class CorruptHeaderError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class UnknownTensorError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass
