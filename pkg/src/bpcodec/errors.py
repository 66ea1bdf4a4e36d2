"""Exception hierarchy shared across the toolkit."""


class CodecError(Exception):
    """Base class for all toolkit errors."""


class FormatError(CodecError, ValueError):
    """Input bytes or files are not in an accepted format."""


class CorruptionError(CodecError, ValueError):
    """Data is structurally readable but internally inconsistent."""


class ConfigurationError(CodecError, ValueError):
    pass


class ShapeError(CodecError, ValueError):
    pass


class ContractError(CodecError, ValueError):
    """A caller violated a documented precondition."""


class UnsupportedError(CodecError, NotImplementedError):
    pass


class UndefinedMetricError(CodecError, ValueError):
    pass


class IncompatibilityError(CodecError):
    """A bitstream and a model disagree on quantizer layout."""


class CheckpointVersionError(CodecError):
    """Checkpoint was written by an incompatible format version."""


class TrainingDivergedError(CodecError, RuntimeError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
