"""Exception and warning types.

Data problems (bad input files, degenerate series, contract violations) derive
from :class:`DataError`; failures of the numerics derive from
:class:`NumericalError`. The CLI maps the two families to exit codes 2 and 3.
"""


class ProdnetError(Exception):
    """Base class for all package errors."""


class DataError(ProdnetError, ValueError):
    """Input data cannot be used as given."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateKeyError(DataError):
    pass


class EmptyPanelError(DataError):
    pass


class InsufficientDataError(DataError):
    def __init__(self, message, firm=None):
        self.firm = firm
        super().__init__(message)


class DegenerateSeriesError(DataError):
    def __init__(self, message, firm=None):
        self.firm = firm
        super().__init__(message)


class UndefinedMeanError(DataError):
    pass


class ContractError(DataError):
    """A documented precondition does not hold."""


class DomainError(DataError):
    """An argument lies outside the domain of the operation."""


class ConfigError(DataError):
    def __init__(self, message, section=None):
        self.section = section
        super().__init__(message)


class NumericalError(ProdnetError, ArithmeticError):
    pass


class CalibrationError(NumericalError):
    """The regularisation strength could not be tuned to the density goal."""

    def __init__(self, message, probes=()):
        self.probes = list(probes)
        super().__init__(message)


class ReconstructionError(ProdnetError):
    """Some block subproblems failed; ``completed`` holds the ones that did not."""

    def __init__(self, message, completed=None, failures=None):
        self.completed = completed or {}
        self.failures = failures or {}
        super().__init__(message)


class ProdnetWarning(UserWarning):
    pass
