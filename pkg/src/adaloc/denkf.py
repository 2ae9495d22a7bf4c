"""Deterministic EnKF analysis with a Schur-localized forecast covariance.

Everything is assembled in observation space from the forecast anomalies:

    PH^T  = rho[:, obs] o (X Y^T) / (N - 1)        (n x m)
    S     = rho[obs, obs] o (Y Y^T) / (N - 1) + R   (m x m)

with ``Y = H X``. One Cholesky factorization of ``S`` serves both the
mean update (full gain) and the anomaly update (half gain).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from adaloc.ensemble import Ensemble, EnsembleError, Observation, ObservationOperator


class AnalysisError(np.linalg.LinAlgError):
    pass


def innovation(forecast_mean, obs: Observation, H: ObservationOperator) -> np.ndarray:
    """``d = y - H xbar``."""
    xbar = np.asarray(forecast_mean, dtype=float)
    if xbar.shape != (H.n,):
        raise EnsembleError(f"forecast mean has shape {xbar.shape}, expected ({H.n},)")
    if obs.m != H.m:
        raise EnsembleError(f"{obs.m} observations for an operator selecting {H.m}")
    return obs.values - xbar[H.index_array]


@dataclass(frozen=True)
class AnalysisInputs:
    forecast: Ensemble
    obs: Observation
    H: ObservationOperator
    rho_xo: np.ndarray  # (n, m) taper columns at the observed components
    rho_oo: np.ndarray  # (m, m) observed block

    def __post_init__(self):
        n, N = self.forecast.n, self.forecast.N
        m = self.H.m
        if N < 2:
            raise EnsembleError("analysis needs at least two members")
        if self.H.n != n or self.obs.m != m:
            raise EnsembleError("forecast, observation and operator dimensions disagree")
        if np.shape(self.rho_xo) != (n, m) or np.shape(self.rho_oo) != (m, m):
            raise EnsembleError(
                f"taper blocks must be ({n}, {m}) and ({m}, {m}), got "
                f"{np.shape(self.rho_xo)} and {np.shape(self.rho_oo)}"
            )


@dataclass(frozen=True)
class AnalysisOutputs:
    analysis: Ensemble
    innovation: np.ndarray
    mean_increment_norm: float
    anomaly_increment_norm: float


def cholesky_spd(S: np.ndarray):
    """Lower Cholesky factor of ``S``; raises ``AnalysisError("S not SPD")`` otherwise."""
    try:
        return sla.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise AnalysisError("S not SPD") from exc


def localized_blocks(X: np.ndarray, Y: np.ndarray, rho_xo, rho_oo, rvar):
    """Localized ``P H^T`` and ``S = H P H^T + R`` from state and observed anomalies."""
    scale = 1.0 / (X.shape[1] - 1)
    PHt = rho_xo * ((X @ Y.T) * scale)
    B = rho_oo * ((Y @ Y.T) * scale)
    B = 0.5 * (B + B.T)
    S = B.copy()
    S[np.diag_indices_from(S)] += rvar
    return PHt, S


def denkf_analysis(inputs: AnalysisInputs) -> AnalysisOutputs:
    ens = inputs.forecast
    idx = inputs.H.index_array
    X = ens.anomalies
    Y = X[idx]
    d = innovation(ens.mean, inputs.obs, inputs.H)
    PHt, S = localized_blocks(X, Y, inputs.rho_xo, inputs.rho_oo, inputs.obs.variances)
    fac = cholesky_spd(S)
    W = sla.cho_solve(fac, np.column_stack([d, Y]), check_finite=False)
    G = PHt @ W
    dmean = G[:, 0]
    dX = -0.5 * G[:, 1:]
    xa = Ensemble.from_mean_anomalies(ens.mean + dmean, X + dX)
    return AnalysisOutputs(
        analysis=xa,
        innovation=d,
        mean_increment_norm=float(np.linalg.norm(dmean)),
        anomaly_increment_norm=float(np.linalg.norm(dX)),
    )


def analyze(forecast: Ensemble, obs: Observation, H: ObservationOperator, rho_xo, rho_oo) -> Ensemble:
    """Convenience wrapper returning only the analysis ensemble."""
    return denkf_analysis(AnalysisInputs(forecast, obs, H, np.asarray(rho_xo), np.asarray(rho_oo))).analysis
