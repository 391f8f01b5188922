"""Exception types shared across the package."""


class HintlocError(Exception):
    """Base class for all package errors."""


class ShapeError(HintlocError):
    """Operands have incompatible shapes; message carries the offending shapes."""


class InvalidValueError(HintlocError):
    """Non-finite input, bad hyperparameter, or out-of-range argument."""


class GenerationError(HintlocError):
    """Scene/query generation cannot satisfy its configuration."""


class DataFormatError(HintlocError):
    """Dataset or checkpoint file is malformed, truncated, or version-mismatched."""


class ConfigError(HintlocError):
    """Run configuration is missing keys, has unknown keys, or bad values."""
