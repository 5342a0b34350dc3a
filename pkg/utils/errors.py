"""
Exception hierarchy for the crack pipeline.

Every error carries the exit code the command line front end returns for it, so the
modules raise domain errors and the CLI only has to translate them.
"""


class CrackPipelineError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 1


class ConfigError(CrackPipelineError, ValueError):
    """Invalid configuration value or combination"""

    exit_code = 2


class DataIOError(CrackPipelineError, OSError):
    """A file could not be read or written"""

    exit_code = 3


class FormatError(DataIOError):
    """Unsupported image or mask encoding"""


class ModelFormatError(DataIOError):
    """A model file could not be parsed"""


class MagicError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class TruncationError(ModelFormatError):
    def __init__(self, message: str = "Model file truncated", expected: int = 0, actual: int = 0):
        super().__init__(f"{message}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class ChecksumError(ModelFormatError):
    pass


class ShapeError(CrackPipelineError, ValueError):
    """Array dimensions do not match what an operation requires"""

    exit_code = 4


class BoundsError(ShapeError):
    pass


class NumericError(CrackPipelineError, ArithmeticError):
    """Non-finite values during training or a failed gradient audit"""

    exit_code = 5


class DatasetError(CrackPipelineError):
    """Dataset layout or pairing problem"""

    exit_code = 6


class PairingError(DatasetError):
    pass


class StateError(CrackPipelineError, RuntimeError):
    """An operation was called out of order (e.g. backward without forward)"""

    exit_code = 7


class MeasurementError(CrackPipelineError, ValueError):
    exit_code = 8

