"""Deterministic EnKF with Bayesian adaptive Schur-product localization."""

from adaloc._backend import BACKEND
from adaloc.ensemble import (
    Ensemble,
    Observation,
    ObservationOperator,
    ensemble_anomalies,
    ensemble_covariance,
    ensemble_mean,
    inflate,
    project_to_obs,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Ensemble",
    "Observation",
    "ObservationOperator",
    "ensemble_anomalies",
    "ensemble_covariance",
    "ensemble_mean",
    "inflate",
    "project_to_obs",
]
