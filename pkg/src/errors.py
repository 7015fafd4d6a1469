"""Exception hierarchy for the sieve AFT tool.

Library code raises these; only the command line turns them into exit codes.
"""

from typing import Optional


class AftSieveError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 1
    code = 'ERROR'


class UsageError(AftSieveError):
    exit_code = 2
    code = 'USAGE'


class ConfigurationError(UsageError, ValueError):
    """Invalid parameter passed to a constructor or operation."""


class KnotPlacementError(ConfigurationError):
    pass


class UnsupportedDerivativeError(ConfigurationError):
    pass


class UnknownDistributionError(ConfigurationError):
    pass


class DataValidationError(AftSieveError, ValueError):
    """Input data does not satisfy the dataset invariants."""

    exit_code = 3
    code = 'DATA'

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f'row {row}')
        if column is not None:
            where.append(f'column {column!r}')
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class FileAccessError(DataValidationError):
    """An input or output file could not be opened, read or written."""

    code = 'IO'


class ConvergenceError(AftSieveError):
    exit_code = 4
    code = 'CONVERGENCE'


class NumericalError(AftSieveError, ArithmeticError):
    exit_code = 5
    code = 'NUMERICAL'


class OutOfDomainError(NumericalError):
    """Spline evaluated outside its basis interval [a, b]."""


class DomainViolationError(NumericalError):
    """A residual left the extended likelihood domain."""

    def __init__(self, message: str, index: int):
        self.index = index
        super().__init__(f'{message} (observation {index})')


class IntegrationError(NumericalError):
    pass


class EmptyRiskSetError(NumericalError):
    pass


class BracketingError(NumericalError):
    pass


class SimulationAbortedError(NumericalError):
    pass
