"""errlab: second-order error propagation, Dirichlet-form error structures,
and Monte-Carlo bias/variance asymptotics of approximation schemes.

Subpackages
-----------
error_algebra
    Exact forward propagation of (value, bias, covariance) triples through
    smooth maps; Gauss and textbook absolute-error calculi for comparison.
structures
    Concrete error structures (samplers, squared-field coefficients,
    generators), products, images, and numerical symmetry/consistency checks.
approximation_lab
    Coupled simulators for approximation pairs (Y, Y_n) and estimation of
    their bias/variance moments and dominance regime.
bias_operators
    Weak-form estimation of the four rate-scaled asymptotic bias operators
    plus locality, first-order, and squared-field consistency checks.
fisher
    Fisher information, Cramer-Rao bounds, and identification of the error
    coefficient field as the inverse information matrix.
cli
    Batch front end (``errlab`` console script): reproducible experiments
    with CSV/JSON reports.
"""

from .error_algebra import (
    ErroneousValue,
    NaiveErrorValue,
    SmoothMap,
    compose,
    gauss_covariance,
    naive_propagate,
    propagate,
    square_identity_residual,
)
from .structures import (
    ErrorStructure,
    TestFunction,
    check_form_generator_link,
    check_symmetry,
    diffusion_consistency,
    gamma,
    image,
    make_structure,
    product,
)
from .approximation_lab import (
    ApproximationScheme,
    MomentReport,
    classify_regime,
    estimate_moments,
    make_scheme,
    propagate_through,
)
from .bias_operators import (
    TestFunctionBasis,
    WeakOperatorEstimate,
    estimate_weak,
    gamma_weak,
    half_sum_residual,
    locality_statistic,
    symmetry_defect,
)
from .fisher import (
    ParametricModel,
    cramer_rao_check,
    fisher_info,
    identify_structure,
    reparametrize_check,
)

__version__ = "0.1.0"
