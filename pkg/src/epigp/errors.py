"""Exception hierarchy.

Each class carries the process exit code the CLI reports for it.
"""


class EpiGPError(Exception):
    exit_code = 1


class ConfigError(EpiGPError, ValueError):
    """Invalid or unknown configuration value."""

    exit_code = 2


class DataError(EpiGPError, ValueError):
    """Input data violates a precondition (ordering, positivity, length)."""

    exit_code = 3


class NumericalError(EpiGPError, ArithmeticError):
    """Factorization failed even after diagonal jitter escalation."""

    exit_code = 4
