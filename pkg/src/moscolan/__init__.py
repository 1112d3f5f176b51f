"""Mosco convergence diagnostics and LAN inference for convex M-estimators."""

from .convex import (
    AbsResidual,
    ConvexFunctional,
    Indicator,
    NormPenalty,
    Quadratic,
    ScaledSum,
    SelectorRule,
    empirical_objective,
    zero_functional,
)
from .estimation import (
    FitResult,
    Gaussian,
    Laplace,
    ModelSpec,
    StudentT,
    fit,
    minimize_convex,
    sandwich_covariance,
    score_clt_statistic,
    simulate_dataset,
)
from .exceptions import *  # noqa: F401,F403
from .hilbert import GaussianMeasure, SymOp, apply_op, basis, hvec, inner, sample_gaussian, solve_op
from .inference import (
    HypothesisSpec,
    LanLimit,
    McReport,
    lan_process,
    lr_limit_sampler,
    lr_statistic,
    monte_carlo_lan,
    monte_carlo_lan_quadraticity,
    monte_carlo_lr,
    quadratic_limit_argmin,
    quadratic_limit_eval,
)
from .mosco import (
    DenseFamily,
    QuadraticForm,
    conjugate_eval,
    basis_family,
    default_family,
    estimate_generalized_hessian,
    hessian_duality_check,
    mosco_distance,
    projection_family,
    resolvent_convergence_probe,
    second_difference_quotient,
)
from .samples import SampleSet
from .sets import Ball, ConvexSet, HalfSpace, WholeSpace

__version__ = "0.1.0"
