"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's precondition."""


class InsufficientData(ValueError):
    """Raised when a fit or statistic has too few usable points."""


class SimulationDiverged(RuntimeError):
    """A simulated state became non-finite.

    ``step`` is the index of the offending Euler step and ``path_index`` the
    path it occurred on (``None`` when unknown).
    """

    def __init__(self, step, path_index=None, message=None):
        self.step = int(step)
        self.path_index = path_index
        if message is None:
            message = f"non-finite state at step {self.step}"
            if path_index is not None:
                message += f" (path {path_index})"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
