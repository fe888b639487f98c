class ConfigError(ValueError):
    """Invalid configuration or arguments; the CLI maps it to exit code 2."""


class TrainingDiverged(RuntimeError):
    """A loss became non-finite.

    The network has already been restored to ``last_finite`` (flat parameter
    vector) when this is raised.
    """

    def __init__(self, message, epoch, last_finite=None):
        super().__init__(message)
        self.epoch = epoch
        self.last_finite = last_finite
