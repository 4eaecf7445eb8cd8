"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class InvalidInputError(ValueError):
    """Runtime input violates an operation's precondition."""


class CorruptFileError(OSError):
    """An on-disk artifact does not match its declared layout."""


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss and cannot continue."""

    def __init__(self, epoch: int, step: int, lr: float):
        self.epoch = epoch
        self.step = step
        self.lr = lr
        super().__init__(
            f"non-finite loss at epoch {epoch}, step {step}, lr {lr:.3e}"
        )
