"""Exception hierarchy shared by every facegallery module."""


class FaceGalleryError(Exception):
    """Base class for all facegallery errors."""


class NormalizationError(FaceGalleryError):
    """A vector could not be normalized, or a unit vector was required."""


class DimensionError(FaceGalleryError):
    """Embedding / gallery / logit dimensions do not agree."""


class NumericsError(FaceGalleryError):
    """Non-finite values reached a numeric kernel."""


class ConfigError(FaceGalleryError):
    """Invalid hyperparameter value or malformed config file."""


class DegenerateLandmarksError(FaceGalleryError):
    """Landmark configuration too degenerate to fit a similarity transform."""


class EmptyDatasetError(FaceGalleryError):
    """A dataset root, index or split contains no usable images."""


class ShapeError(FaceGalleryError):
    """Image tensor has the wrong shape for the encoder."""


class BackendLoadError(FaceGalleryError):
    """Encoder backend manifest or model file could not be loaded."""


class InsufficientClassesError(FaceGalleryError):
    """An operation needs at least two identities."""


class TemplateError(FaceGalleryError):
    """Prompt template does not contain exactly one '{}' placeholder."""


class ScheduleError(FaceGalleryError):
    """Learning-rate schedule queried outside [0, total_steps]."""


class UndefinedMetricError(FaceGalleryError):
    """A rate was requested whose denominator is zero."""


class DataFormatError(FaceGalleryError):
    """A cache, gallery, index or sidecar file is corrupt or mismatched."""
