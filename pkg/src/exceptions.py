"""Error types raised across the denoising stack."""


class ShapeError(ValueError):
    """Operand shapes do not agree"""


class GeometryError(ValueError):
    """A soft-split stage geometry is invalid for the input it is applied to"""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf"""


class TapeError(RuntimeError):
    """A gradient was requested that the tape cannot provide"""


class FormatError(ValueError):
    """A container file is malformed"""


class TruncationError(FormatError):
    """A container file ends before its declared payload"""

    def __init__(self, expected: int, actual: int, what: str = "payload"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated {what}: expected {expected} bytes, got {actual}")


class VersionError(FormatError):
    """A container file was written by an unsupported format version"""


class RangeError(ValueError):
    """Pixel values fall outside the declared value range"""


class ConfigError(ValueError):
    """A configuration file or preset could not be resolved"""


class TrainingDivergedError(ArithmeticError):
    """Training produced a non-finite loss"""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step}")
