"""Exception hierarchy. Each class maps to a CLI exit code."""


class TrimError(Exception):
    exit_code = 1


class ShapeError(TrimError, ValueError):
    exit_code = 2


class ContractError(TrimError, ValueError):
    """A documented precondition was violated."""

    exit_code = 2


class FormatError(TrimError):
    exit_code = 3


class NumericalError(TrimError, ArithmeticError):
    exit_code = 4


class BudgetError(TrimError):
    """A sparsity budget cannot be met under the per-row cutoff."""

    exit_code = 4
