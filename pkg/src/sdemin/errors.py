"""Exception types shared across the package."""


class SdeminError(Exception):
    pass


class DomainError(SdeminError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(SdeminError, ArithmeticError):
    """A numerical procedure failed (non-convergence, empty band, ...)."""


class ContractError(SdeminError, ValueError):
    """Inputs violate an operation's precondition (missing noise, grid mismatch)."""


class ConfigError(SdeminError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
