"""Quantum-annealed variational Bayes for Gaussian mixtures."""

from .anneal import (
    AnnealState,
    ScheduleConfig,
    TrialResult,
    e_step,
    hopping_matrix,
    mean_field_objective,
    run_trial,
    schedule,
)
from .gmm import Dataset, GmmPosterior, GmmPrior, count_clusters, elbo, expected_log_resp, m_step

__version__ = "0.1.0"
