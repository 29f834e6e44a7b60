"""Exception hierarchy; the CLI maps these onto exit codes."""


class FrontierMatchError(Exception):
    pass


class ValidationError(FrontierMatchError, ValueError):
    """Bad input or configuration (exit status 2)."""


class NumericalError(FrontierMatchError, ArithmeticError):
    """A numeric stage could not produce a result (exit status 3)."""
