"""Exception hierarchy shared by the simulator, the file formats and the CLI."""


class DDPredictError(Exception):
    code = "error"


class ConfigError(DDPredictError, ValueError):
    code = "config"


class FitError(DDPredictError, ValueError):
    code = "fit"


class FormatError(DDPredictError):
    """Base class for on-disk format problems."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionMismatchError(FormatError):
    code = "version_mismatch"


class TruncatedFileError(FormatError):
    code = "truncated"


class ShapeMismatchError(FormatError):
    code = "shape_mismatch"


class TrainingDivergedError(DDPredictError, FloatingPointError):
    code = "nan_loss"
