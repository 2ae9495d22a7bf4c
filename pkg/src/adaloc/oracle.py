"""Truth-aware radius selection: the per-cycle analysis-error minimizer used as a baseline.

Candidates are scored by the RMSE of the analysis mean against the truth.
The univariate search scans the whole grid. The multivariate search starts
every group at the univariate argmin and then does coordinate descent over
the groups, so it can never end worse than the univariate choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from adaloc._backend import kernels
from adaloc.ensemble import Ensemble, Observation, ObservationOperator
from adaloc.localization import LocalizationSpec, mean_code, prolong

LORENZ_GRID = tuple(np.arange(1, 33) * 0.5)
QG_GRID = tuple(np.arange(5.0, 46.0, 5.0))


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleSearchSpec:
    mode: str = "univariate"
    grid: tuple = LORENZ_GRID
    sweeps: int = 2

    def __post_init__(self):
        if self.mode not in ("univariate", "multivariate"):
            raise ValueError(f"oracle mode must be univariate or multivariate, got {self.mode!r}")
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size == 0:
            raise ValueError("oracle grid must be a nonempty list")
        if np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValueError("oracle grid must be positive and strictly ascending")
        if self.sweeps < 1:
            raise ValueError("need at least one coordinate-descent sweep")
        object.__setattr__(self, "grid", tuple(float(x) for x in g))

    @classmethod
    def for_model(cls, kind: str, mode: str = "univariate", sweeps: int = 2) -> "OracleSearchSpec":
        return cls(mode, QG_GRID if kind == "qg" else LORENZ_GRID, sweeps)


@dataclass
class OracleResult:
    upsilon: np.ndarray
    rmse: float
    candidates: np.ndarray  # grid RMSEs of the univariate scan (NaN where the analysis failed)
    failed: list = field(default_factory=list)
    evaluations: int = 0


class _Scorer:
    """Precomputed observation-space blocks; scores many radius vectors in one kernel call."""

    def __init__(self, model, truth, forecast: Ensemble, obs: Observation, H: ObservationOperator, mean: str):
        idx = H.index_array
        X = forecast.anomalies
        Y = X[idx]
        scale = 1.0 / (forecast.N - 1)
        self.xf = np.ascontiguousarray(forecast.mean)
        self.cxo = np.ascontiguousarray(X @ Y.T * scale)
        coo = Y @ Y.T * scale
        self.coo = np.ascontiguousarray(0.5 * (coo + coo.T))
        self.d = np.ascontiguousarray(obs.values - forecast.mean[idx])
        self.rvar = np.ascontiguousarray(obs.variances)
        self.dxo = np.ascontiguousarray(model.distances(None, idx), dtype=float)
        self.doo = np.ascontiguousarray(model.distances(idx, idx), dtype=float)
        self.obs = np.ascontiguousarray(idx, dtype=np.int64)
        self.truth = np.ascontiguousarray(truth, dtype=float)
        self.kind = mean_code(mean)
        self.evaluations = 0

    def __call__(self, radii: np.ndarray) -> np.ndarray:
        radii = np.ascontiguousarray(np.atleast_2d(radii), dtype=float)
        self.evaluations += radii.shape[0]
        return np.asarray(kernels.analysis_rmse_batch(
            self.xf, self.cxo, self.coo, self.d, self.rvar, self.dxo, self.doo,
            self.obs, radii, self.kind, self.truth))


def _argmin(scores):
    ok = np.isfinite(scores)
    if not np.any(ok):
        return None
    # first minimum on an ascending grid is the smallest radius among ties
    return int(np.argmin(np.where(ok, scores, np.inf)))


def oracle_select(truth, forecast: Ensemble, obs: Observation, H: ObservationOperator,
                  loc: LocalizationSpec, spec: OracleSearchSpec, model) -> OracleResult:
    grid = np.asarray(spec.grid)
    score = _Scorer(model, truth, forecast, obs, H, loc.mean)
    n = model.n
    uni = score(np.repeat(grid[:, None], n, axis=1))
    failed = [float(grid[i]) for i in np.flatnonzero(~np.isfinite(uni))]
    best = _argmin(uni)
    if best is None:
        raise OracleError("analysis failed at every oracle grid point")
    g = loc.g if spec.mode == "multivariate" else 1
    ups = np.full(g, grid[best])
    rmse = float(uni[best])
    if spec.mode == "multivariate" and g > 1:
        mapping = loc.mapping
        for _ in range(spec.sweeps):
            for j in range(g):
                trials = np.repeat(ups[None, :], grid.size, axis=0)
                trials[:, j] = grid
                scores = score(np.stack([prolong(mapping, t) for t in trials]))
                k = _argmin(scores)
                if k is not None and scores[k] < rmse:
                    ups[j] = grid[k]
                    rmse = float(scores[k])
    return OracleResult(ups, rmse, uni, failed, score.evaluations)


def oracle_run(config, spec: OracleSearchSpec | None = None, workers: int = 1):
    """Run a twin experiment whose radii are picked by the oracle every cycle."""
    from adaloc.harness.experiment import run_experiment

    if spec is not None:
        config = config.with_oracle(spec)
    return run_experiment(config.with_mode("oracle"))
