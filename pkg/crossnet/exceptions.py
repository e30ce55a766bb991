"""Exception hierarchy shared by every crossnet module."""


class CrossNetError(Exception):
    """Base class for all crossnet errors."""


class ShapeError(CrossNetError, ValueError):
    """Operand shapes are inconsistent."""


class TargetValidationError(CrossNetError, ValueError):
    """A target label distribution is not normalized."""


class ContractError(CrossNetError, RuntimeError):
    """A documented precondition of an operation was violated."""


class ConfigError(CrossNetError, ValueError):
    """Invalid configuration, size guard exceeded or unusable input set."""


class TrainingDivergedError(CrossNetError, RuntimeError):
    def __init__(self, step: int, lr: float, loss: float):
        self.step = step
        self.lr = lr
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr})")


class SceneRejectedError(CrossNetError):
    """The ground camera lies inside a building footprint."""


class DatasetFormatError(CrossNetError, OSError):
    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")
