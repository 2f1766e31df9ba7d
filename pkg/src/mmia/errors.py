"""Exception types shared across the package."""


class MmiaError(Exception):
    pass


class EmptyCaption(MmiaError, ValueError):
    pass


class SpecTooSmall(MmiaError, ValueError):
    pass


class InsufficientData(MmiaError, ValueError):
    pass


class FormatError(MmiaError):
    pass


class DivergenceError(MmiaError, FloatingPointError):
    def __init__(self, epoch, what="loss"):
        super().__init__(f"{what} diverged (non-finite or exploding) at epoch {epoch}")
        self.epoch = epoch


class CheckpointError(MmiaError):
    pass


class SingleClassError(MmiaError, ValueError):
    pass


class PerplexityError(MmiaError, ValueError):
    pass


class ParseError(MmiaError, ValueError):
    def __init__(self, code, position, reason):
        super().__init__(f"bad scenario code {code!r} at position {position}: {reason}")
        self.code = code
        self.position = position


class ConfigError(MmiaError, ValueError):
    pass


class DependencyError(MmiaError):
    def __init__(self, missing):
        super().__init__(f"missing upstream artifact: {missing}")
        self.missing = missing


class StageError(MmiaError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
