"""Exception types shared across the package."""


class StImputeError(Exception):
    """Base class for package errors."""


class ShapeError(StImputeError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(StImputeError, ValueError):
    """A precondition of an operation was violated."""


class DegenerateRowError(ContractError):
    """Every entry of an attention row is masked out."""


class NumericalError(StImputeError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class DataError(StImputeError, ValueError):
    """Malformed input data (CSV layout, config files)."""
