"""Exception hierarchy.

Every error carries a short machine-readable ``code``. Errors deriving from
:class:`ValidationError` signal bad inputs (CLI exit code 2); errors deriving
from :class:`NumericalError` signal a numerical failure on valid inputs (exit
code 3).
"""


class BinscatterError(Exception):
    code = "binscatter_error"


class ValidationError(BinscatterError, ValueError):
    code = "validation_error"


class NumericalError(BinscatterError, ArithmeticError):
    code = "numerical_error"


class DegeneratePartition(ValidationError):
    code = "degenerate_partition"


class OutOfSupport(ValidationError):
    code = "out_of_support"


class InvalidDerivative(ValidationError):
    code = "invalid_derivative"


class UnsupportedSmoothness(ValidationError):
    code = "unsupported_smoothness"


class UnsupportedOrder(ValidationError):
    code = "unsupported_order"


class DomainError(ValidationError):
    code = "domain_error"


class SchemaError(ValidationError):
    code = "schema_error"


class FileError(ValidationError):
    code = "file_error"


class EmptyData(ValidationError):
    code = "empty_data"


class EmptyGroup(ValidationError):
    code = "empty_group"


class NoCommonSupport(ValidationError):
    code = "no_common_support"


class SingularSystem(NumericalError):
    code = "singular_system"


class SingularCurvature(NumericalError):
    code = "singular_curvature"


class NoConvergence(NumericalError):
    code = "no_convergence"


class NullFitFailure(NumericalError):
    code = "null_fit_failure"


class DegenerateBiasWarning(UserWarning):
    """Estimated bias constant is zero; the selector falls back to n^(1/(2p+3))."""


class QuasiUniformityWarning(UserWarning):
    pass


class CurvatureFloorWarning(UserWarning):
    pass
