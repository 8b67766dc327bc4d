"""Conformal meta-analysis with untrusted priors."""

from .baselines import HeterogeneityFit, bayesian_trial, dersimonian_laird, reml_hksj
from .conformal_krr import (
    CandidateIntervals,
    PredictionInterval,
    ResidualPair,
    candidate_intervals,
    oracle_conformal_set,
    predict_noise_free,
    residuals_at,
)
from .errors import (
    ConformetaError,
    IdiocentricityViolation,
    InfeasibleConfidenceError,
    InvalidGramError,
    InvalidInputError,
    NumericalFailure,
)
from .kernel_core import (
    KernelSpec,
    Precomputation,
    PriorBundle,
    TrainingFactor,
    TrialRecord,
    assemble_prior,
    kernel_eval,
    precompute,
)
from .meta_predict import (
    effective_confidence,
    eta_for_confidence,
    predict_clean_effect,
    predict_effect,
    predict_trial,
)
from .sim_harness import CoverageReport, SimConfig, run_simulation

__version__ = "0.1.0"
