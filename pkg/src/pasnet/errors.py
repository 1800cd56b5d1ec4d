"""Exception types raised across the package."""


class PasNetError(Exception):
    pass


class ConfigurationError(PasNetError, ValueError):
    """Bad shapes, hyperparameters or config keys."""


class InputError(PasNetError, ValueError):
    """Bad data: non-finite values, empty datasets, malformed files."""


class InvalidStateError(PasNetError, RuntimeError):
    pass


class TrainingError(PasNetError, RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    """Raised when the loss goes non-finite. ``checkpoint`` holds the last good state dict."""

    def __init__(self, message, checkpoint=None, epoch=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch
