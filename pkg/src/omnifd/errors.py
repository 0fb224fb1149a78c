"""Exception types raised across the package."""


class OmniFDError(ValueError):
    """Base class; every error carries a short machine-readable ``code``."""

    code = "omnifd_error"

    def to_record(self):
        return {"error": self.code, "message": str(self)}


class EmptySource(OmniFDError):
    code = "empty_source"


class NonDivisibleResolution(OmniFDError):
    code = "non_divisible_resolution"


class ShapeMismatch(OmniFDError):
    code = "shape_mismatch"


class WidthMismatch(OmniFDError):
    code = "width_mismatch"


class LevelOutOfRange(OmniFDError):
    code = "level_out_of_range"


class VideoNotSupported(OmniFDError):
    code = "video_not_supported"


class ImageNotSupported(OmniFDError):
    code = "image_not_supported"


class SegmentOutOfRange(OmniFDError):
    code = "segment_out_of_range"


class NoTaskPresent(OmniFDError):
    code = "no_task_present"


class InsufficientModality(OmniFDError):
    code = "insufficient_modality"


class TaskDataMismatch(OmniFDError):
    code = "task_data_mismatch"


class NonFiniteLoss(OmniFDError):
    code = "non_finite_loss"


class MissingHead(OmniFDError):
    code = "missing_head"


class EmptyInput(OmniFDError):
    code = "empty_input"


class SingleClass(OmniFDError):
    code = "single_class"
