"""
DistilVAD - Exceptions
All errors raised by the toolkit derive from DistilVADError.
"""


class DistilVADError(Exception):
    """Base class for every error raised by DistilVAD."""

    kind = "runtime"


class ShapeError(DistilVADError, ValueError):
    """A tensor dimension does not fit the operation.

    Attributes:
        axis (str): name of the offending axis ("channels", "height", ...)
    """

    kind = "shape"

    def __init__(self, message, axis=None):
        super().__init__(message if axis is None else f"{message} (axis: {axis})")
        self.axis = axis


class GradientError(DistilVADError):
    kind = "gradient"


class NonFiniteError(DistilVADError, FloatingPointError):
    """A loss or activation became NaN or infinite."""

    kind = "non_finite"


class ConfigError(DistilVADError, ValueError):
    """Invalid run configuration.

    Attributes:
        key (str): dotted path of the offending key, when known
    """

    kind = "config"

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class CheckpointError(DistilVADError):
    kind = "checkpoint"


class CheckpointMagicError(CheckpointError):
    kind = "checkpoint_magic"


class CheckpointTruncatedError(CheckpointError):
    kind = "checkpoint_truncated"


class AnomalyMapError(DistilVADError):
    kind = "anomaly_map"


class MapNotFoundError(AnomalyMapError, FileNotFoundError):
    kind = "map_missing"


class MapMagicError(AnomalyMapError):
    kind = "map_magic"


class MapTruncatedError(AnomalyMapError):
    kind = "map_truncated"


class UndefinedAUCError(DistilVADError):
    """ROC AUC requested for scores whose labels contain a single class."""

    kind = "undefined_auc"


class EmptyDatasetError(DistilVADError):
    kind = "empty_dataset"


class LabelFileError(DistilVADError):
    """A clip's labels.csv is empty, malformed or lacks a column."""

    kind = "labels"


class TeacherResolutionError(DistilVADError):
    kind = "teacher_resolution"


class UnknownAxisError(DistilVADError, ValueError):
    kind = "unknown_axis"
