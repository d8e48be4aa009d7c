"""Exception hierarchy shared by all relayee modules.

The CLI maps each family to an exit code: model/numeric errors exit 1,
configuration and usage errors exit 2, infeasible delay budgets exit 3.
"""


class RelayEEError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(RelayEEError, ValueError):
    pass


class InvalidTableError(InvalidParameterError):
    pass


class NumericError(RelayEEError, ArithmeticError):
    pass


class DegenerateChannelError(NumericError):
    """Link never leaves the no-transmission state (zero rate denominator)."""


class SlowFadingViolation(NumericError):
    """Adjacent-state transition probability exceeded one."""


class StarvedLinkError(NumericError):
    """A link with zero spectrum-access probability was asked to carry traffic."""


class DivergenceError(NumericError):
    """Per-attempt error probability of one: service time is unbounded."""


class ChainStructureError(NumericError):
    pass


class UndefinedRateError(NumericError):
    """A ratio whose denominator (arrival rate, energy) is zero."""


class OrderingError(RelayEEError):
    pass


class InfeasibleDelayError(RelayEEError):
    def __init__(self, message, min_delay=None):
        super().__init__(message)
        self.min_delay = min_delay


class ConfigError(RelayEEError):
    def __init__(self, section, key, message):
        super().__init__(f"[{section}] {key}: {message}")
        self.section = section
        self.key = key


class ComparabilityError(RelayEEError):
    pass
