"""Exception hierarchy shared by every subsystem."""


class EyeParseError(Exception):
    """Base class for all package errors."""


class ShapeError(EyeParseError, ValueError):
    pass


class ContractError(EyeParseError):
    """A call violated an operation's precondition."""


class NumericError(EyeParseError, ArithmeticError):
    """Non-finite activation. ``layer`` names where it appeared."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingError(EyeParseError):
    """Divergence or non-finite gradient during training."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class InputError(EyeParseError, ValueError):
    pass


class CapacityError(EyeParseError):
    pass


class BoundsError(EyeParseError, IndexError):
    pass


class GenerationError(EyeParseError):
    pass


class ConfigurationError(EyeParseError):
    pass


class CheckpointError(EyeParseError):
    pass


class FormatError(CheckpointError):
    """Wrong magic bytes."""


class VersionError(CheckpointError):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class TruncationError(CheckpointError):
    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor
