"""Ridge-corrected penalized spline GAMs with asymptotic inference."""

__version__ = "0.1.0"

from .basis import BasisSpec, CovariateNormalizer, basis_vector, design_matrix
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DataError,
    DomainError,
    GamError,
    NumericalError,
)
from .family import Bernoulli, Gamma, Gaussian, Poisson, get_family
from .fit import GamFit, GamSpec, fit_rcps, gcv_select, make_spec, predict
from .inference import confidence_interval, partial_residuals
from .mixed import MixedSpec, pql_fit
from .penalty import PenaltyConfig

__all__ = [
    "BasisSpec", "CovariateNormalizer", "basis_vector", "design_matrix",
    "GamError", "DomainError", "ConfigurationError", "DataError", "ConvergenceError",
    "NumericalError", "Bernoulli", "Gamma", "Gaussian", "Poisson", "get_family",
    "GamFit", "GamSpec", "fit_rcps", "gcv_select", "make_spec", "predict",
    "confidence_interval", "partial_residuals", "MixedSpec", "pql_fit", "PenaltyConfig",
]
