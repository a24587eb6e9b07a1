"""Exception hierarchy; the CLI maps each family to an exit code."""


class EnsembleError(Exception):
    exit_code = 2


class ConfigError(EnsembleError, ValueError):
    exit_code = 1


class NumericalError(EnsembleError, ArithmeticError):
    """Oracle failed to produce a certified solution."""

    exit_code = 2


class InvariantViolation(EnsembleError, RuntimeError):
    """A proven bound was exceeded (e.g. patch count above d*M^2/alpha^2)."""

    exit_code = 3


class StaleReportError(EnsembleError, RuntimeError):
    exit_code = 3


class ReplayContextError(EnsembleError, LookupError):
    exit_code = 1
