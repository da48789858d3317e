"""Subspace unlearning: learn an orthonormal projector U that keeps the
remaining data's feature variance and drops the forgetting data's."""

__version__ = "0.1.0"

from .analysis import reconstruction_errors, select_dim, separability_report, spectrum
from .dataio import FeatureMatrix, SyntheticScenario, synth
from .errors import (DegenerateCovarianceError, DegenerateDirectionError, FormatError,
                     InvalidInputError, LoftError, NumericalFailure)
from .evaluator import LinearHead, MetricsTable, absorb, avg_gap, evaluate, mia_score, probe_train
from .matcore import CovarianceSummary, covariance, pool_covariances, sym_eig, thin_qr
from .objective import ObjectiveInputs, ObjectiveValue, euclid_grad, eval_objective
from .optimizer import FitTrace, OptimizerConfig, fit
from .stiefel import pca_init, principal_angles, random_stiefel, retract_qr, tangent_project

__all__ = [
    "CovarianceSummary", "DegenerateCovarianceError", "DegenerateDirectionError", "FeatureMatrix",
    "FitTrace", "FormatError", "InvalidInputError", "LinearHead", "LoftError", "MetricsTable",
    "NumericalFailure", "ObjectiveInputs", "ObjectiveValue", "OptimizerConfig", "SyntheticScenario",
    "absorb", "avg_gap", "covariance", "euclid_grad", "eval_objective", "evaluate", "fit",
    "mia_score", "pca_init", "pool_covariances", "principal_angles", "probe_train", "random_stiefel",
    "reconstruction_errors", "retract_qr", "select_dim", "separability_report", "spectrum", "sym_eig",
    "synth", "tangent_project", "thin_qr",
]
