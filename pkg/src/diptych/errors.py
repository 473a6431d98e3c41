"""Exception hierarchy shared across the package."""


class DiptychError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DiptychError, ValueError):
    """Array dimensions do not satisfy an operation's contract."""


class NumericError(DiptychError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class PreconditionError(DiptychError, ValueError):
    """Input violates a documented operation precondition."""


class DegenerateInputError(DiptychError, ValueError):
    """Input is well-formed but carries no usable signal."""


class InputError(DiptychError, ValueError):
    """Empty or otherwise unusable operation input."""


class ConfigError(DiptychError, ValueError):
    """Invalid configuration value."""


class TemplateError(DiptychError, ValueError):
    """Prompt template placeholder missing or empty."""


class RegionError(DiptychError, ValueError):
    """Mask region outside the editable panel, or with zero area."""


class DetectionError(DiptychError, RuntimeError):
    """Segmenter found no subject."""


class NetworkError(DiptychError, RuntimeError):
    """Remote segmenter transport failure, surfaced after retries."""


class ProtocolError(DiptychError, RuntimeError):
    """Remote segmenter returned a malformed or inconsistent payload."""


class TrainingError(DiptychError, RuntimeError):
    """Training diverged or produced non-finite losses."""


class CompatibilityError(DiptychError, ValueError):
    """Checkpoint or adapter does not match the model it is used with."""
