class StratquantError(Exception):
    """Base class for errors raised by this package."""


class BudgetExceeded(StratquantError):
    """An exhaustive enumeration would exceed its configured budget."""


class DesignError(StratquantError):
    """The dataset's design does not support the requested analysis."""


class InputError(StratquantError, ValueError):
    """Malformed input file."""
