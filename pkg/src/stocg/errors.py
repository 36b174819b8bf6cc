"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and I/O failures with 4.
"""


class StocgError(Exception):
    """Base class for all library errors."""


class ContractViolation(StocgError, ValueError):
    """An argument broke an operation's precondition (shape, finiteness, range)."""


class ConfigError(StocgError, ValueError):
    """An inconsistent problem, solver or experiment configuration."""


class NumericalDomainError(StocgError, ArithmeticError):
    """A map produced a non-finite value; ``level`` names the offending level."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class InvariantError(StocgError, RuntimeError):
    """An internal invariant (e.g. feasibility of an iterate) failed."""


class DataError(StocgError, ValueError):
    """Input data cannot support the requested statistic."""


class StatisticalPowerError(DataError):
    """Too few replications for the requested study."""
