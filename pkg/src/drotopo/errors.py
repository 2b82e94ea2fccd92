"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """Invalid problem setup: bad mesh sizes, config keys, targets, caps."""


class NumericalError(RuntimeError):
    """A solver failed to reach its required accuracy.

    Carries the final residual (or marginal error) when one is available.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
