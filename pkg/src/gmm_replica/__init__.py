"""Replica order parameters and de-biased inference for L1-penalised
margin classifiers on two-component Gaussian mixtures."""

from .classifier import FitResult, QuadLassoProblem, fit, margins, solve_quad_lasso
from .covariance import CovarianceFactors, CovarianceKind, CovarianceModel, build_correlation, factorize
from .gmm_data import Dataset, MixtureDesign, make_mean, make_sparse_truth, sample_dataset
from .inference import InferenceReport, confidence_interval, debias, infer, p_value
from .losses import HINGE, LOGISTIC, get_loss
from .replica import (
    OrderParameters,
    SolverOptions,
    solve_fixed_point,
    theoretical_power,
    theoretical_precision,
    update_q_group,
    update_zeta_group,
)

__version__ = "0.1.0"
