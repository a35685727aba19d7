from typing import Optional


class SphericityError(Exception):
    """Base class for every failure raised by the package"""

    exit_code = 1


class ConfigError(SphericityError, ValueError):
    """Invalid bandwidths, grids, levels or run settings"""

    exit_code = 2


class TableError(ConfigError):
    """Requested quantile level is absent from the W table and cannot be interpolated"""


class DataError(SphericityError, ValueError):
    """Input data cannot be used for estimation"""

    exit_code = 3


class ParseError(DataError):
    """Non-numeric or non-finite cell in an input table"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        self.row = row
        self.column = column
        if row is not None and column is not None:
            message = f"{message} at row {row}, column {column}"
        super().__init__(message)


class ZeroVectorError(DataError):
    """An observation is the zero vector, so it has no direction"""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"observation at row {row} is the zero vector")


class DimensionError(DataError):
    """Sample has fewer than two dimensions or observations"""


class NumericError(SphericityError, ArithmeticError):
    """Numerical procedure failed"""

    exit_code = 4


class FactorizationError(NumericError):
    """Covariance matrix is not symmetric positive definite"""


class QuadratureBudgetError(NumericError):
    """Quadrature rule failed its refinement self-check"""


class DegenerateSampleWarning(UserWarning):
    """All jackknife pseudovalues coincide, so the variance estimate is zero"""


def exit_code_for(error: BaseException) -> int:
    """Stable exit code contract: 2 config, 3 data, 4 numeric"""

    if isinstance(error, SphericityError):
        return error.exit_code
    return 1
