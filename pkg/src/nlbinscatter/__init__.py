"""Nonlinear binscatter: semilinear M-estimation on data-driven bins.

Least squares, logistic, quantile and Huber fits of ``y`` on a binned
piecewise-polynomial (or spline) function of ``x`` plus linear controls,
with IMSE-optimal bin selection and simulation-based uniform inference.
"""

__version__ = "0.1.0"

from .basis import BasisSpec, design_matrix, eval_basis
from .covariance import CovarianceSet, covariance, gram, meat, omega, upsilon_hat
from .data import Dataset, load_csv
from .errors import (
    BinscatterError,
    CurvatureFloorWarning,
    DegenerateBiasWarning,
    NumericalError,
    QuasiUniformityWarning,
    ValidationError,
)
from .estimator import (
    EvalPoint,
    FitResult,
    fit,
    fit_polynomial,
    make_eval_point,
    predict_level,
    predict_marginal,
    predict_mu,
    predict_theta,
)
from .inference import (
    BandResult,
    InferenceConfig,
    TestResult,
    compare_groups,
    confidence_band,
    eval_grid,
    pointwise_ci,
    shape_test,
    simulate_sup,
    spec_test,
)
from .models import ModelSpec, parse_model, psi, rho
from .partition import Partition, assign_bins, make_partition, quasi_uniform_ratio
from .selector import SelectorResult, bernoulli_like_poly, dpi_select, p_select, rot_select

__all__ = [
    "BandResult", "BasisSpec", "BinscatterError", "CovarianceSet", "CurvatureFloorWarning",
    "Dataset", "DegenerateBiasWarning", "EvalPoint", "FitResult", "InferenceConfig", "ModelSpec",
    "NumericalError", "Partition", "QuasiUniformityWarning", "SelectorResult", "TestResult",
    "ValidationError", "assign_bins", "bernoulli_like_poly", "compare_groups",
    "confidence_band", "covariance", "design_matrix", "dpi_select", "eval_basis", "eval_grid",
    "fit", "fit_polynomial", "gram", "load_csv", "make_eval_point", "make_partition", "meat",
    "omega", "p_select", "parse_model", "pointwise_ci", "predict_level", "predict_marginal",
    "predict_mu", "predict_theta", "psi", "quasi_uniform_ratio", "rho", "rot_select",
    "shape_test", "simulate_sup", "spec_test", "upsilon_hat",
]
