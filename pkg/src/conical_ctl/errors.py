"""Exception types shared across the engine."""


class ConicalCtlError(Exception):
    """Base class for all engine errors."""


class ConfigError(ConicalCtlError, ValueError):
    """Invalid grid, model, field or scenario configuration."""


class ContractViolation(ConicalCtlError, ValueError):
    """Arrays handed to an operation do not match the lattice they claim."""


class DomainError(ConicalCtlError, ValueError):
    """Evaluation outside the domain of a function (CI point, forbidden x)."""


class NumericalFailure(ConicalCtlError, RuntimeError):
    """Non-finite values appeared during propagation."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
