"""Minimum-information copulas on orthonormal and multiwavelet bases, and vines built from them."""
from .basis import (
    BasisFamily1D, PiecewisePolynomial1D, TensorBasis2D, candidate_pool,
    gram_schmidt_orthonormal, legendre_multiwavelets, legendre_scaling,
    ordinary_polynomials, parse_label, tensor,
)
from .data import Dataset, ingest_csv, rank_transform
from .errors import MinVineError
from .fit import (
    CopulaFit, FitConfig, MomentConstraint, PairSample, empirical_moments,
    sample_log_likelihood, solve_lambdas, stepwise_select,
)
from .grid import DiscretizedCopula, UnitGrid, d1ad2_project, eval_kernel
from .vine import (
    VineModel, VineStructure, build_dvine, fit_vine, sample_vine,
    validate_regular_vine, vine_log_density,
)

__version__ = "0.1.0"

__all__ = [
    "BasisFamily1D", "CopulaFit", "Dataset", "DiscretizedCopula", "FitConfig",
    "MinVineError", "MomentConstraint", "PairSample", "PiecewisePolynomial1D",
    "TensorBasis2D", "UnitGrid", "VineModel", "VineStructure", "build_dvine",
    "candidate_pool", "d1ad2_project", "empirical_moments", "eval_kernel",
    "fit_vine", "gram_schmidt_orthonormal", "ingest_csv", "legendre_multiwavelets",
    "legendre_scaling", "ordinary_polynomials", "parse_label", "rank_transform",
    "sample_log_likelihood", "sample_vine", "solve_lambdas", "stepwise_select",
    "tensor", "validate_regular_vine", "vine_log_density",
]
