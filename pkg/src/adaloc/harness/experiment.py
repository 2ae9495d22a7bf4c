"""Twin experiments: synthetic truth, simulated observations and the assimilation loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from adaloc.adaptive import FourDSettings, adaptive_cycle
from adaloc.denkf import AnalysisInputs, denkf_analysis
from adaloc.ensemble import Ensemble, Observation, ObservationOperator, inflate
from adaloc.harness.config import ExperimentConfig
from adaloc.localization import LocalizationSpec, build_rho
from adaloc.models import (
    Lorenz96,
    Lorenz96Config,
    ModelBlowUp,
    MultivariateLorenz96,
    MultivariateLorenz96Config,
    QGConfig,
    QuasiGeostrophic,
    lorenz96_initial_condition,
    propagate,
    propagate_states,
)
from adaloc.oracle import OracleSearchSpec, oracle_select

STREAMS = ("truth", "obs", "ensemble")


def build_model(cfg: ExperimentConfig):
    m = cfg.model
    p = m.resolved()
    if m.kind == "lorenz96":
        return Lorenz96(Lorenz96Config(n=int(p["n"]), F=p["F"], dt=p["dt"]))
    if m.kind == "mlorenz96":
        return MultivariateLorenz96(MultivariateLorenz96Config(
            n=int(p["n"]), base=p["base"], amplitude=p["amplitude"], omega=p["omega"], q=int(p["q"]), dt=p["dt"]))
    return QuasiGeostrophic(QGConfig(grid=int(p["grid"]), F=p["F"], eps=p["eps"], A=p["A"], dt=p["dt"]))


def rng_streams(seed: int) -> dict:
    """Independent generators per purpose, so changing one use never shifts another's draws."""
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAMS, children)}


def compute_rmse(truth, analysis, window=None) -> float:
    """Spatio-temporal RMSE: ``sqrt(mean over times and components of (truth - analysis)^2)``.

    ``window`` is a ``(start, stop)`` pair of row indices (Python slice semantics).
    """
    truth = np.asarray(truth, dtype=float)
    analysis = np.asarray(analysis, dtype=float)
    if truth.shape != analysis.shape:
        raise ValueError(f"trace shapes differ: {truth.shape} vs {analysis.shape}")
    if truth.ndim == 1:
        truth, analysis = truth[None, :], analysis[None, :]
    lo, hi = (0, truth.shape[0]) if window is None else window
    e = truth[lo:hi] - analysis[lo:hi]
    if e.size == 0:
        raise ValueError("empty RMSE window")
    return float(np.sqrt(np.mean(e * e)))


# ---------------------------------------------------------------------------
# QG climatology (a long free run, shared by every experiment with the same model and seed)

@lru_cache(maxsize=4)
def _qg_climatology(model_key: tuple, seed: int, spinup: float, duration: float, stride: float):
    grid, F, eps, A, dt = model_key
    model = QuasiGeostrophic(QGConfig(grid=grid, F=F, eps=eps, A=A, dt=dt))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    x = model.random_state(rng, spin=spinup)
    states = []
    t = 0.0
    nsnap = max(1, int(round(duration / stride)))
    for _ in range(nsnap):
        x = propagate_states(model, x, t, t + stride)
        t += stride
        states.append(x)
    pool = np.array(states).T
    pool.setflags(write=False)
    return pool


def qg_climatology(cfg: ExperimentConfig, seed: int) -> np.ndarray:
    """``(n, snapshots)`` stream-function states from a spun-up free run; the last one starts the truth."""
    p = cfg.model.resolved()
    key = (int(p["grid"]), float(p["F"]), float(p["eps"]), float(p["A"]), float(p["dt"]))
    return _qg_climatology(key, int(seed), float(p["spinup_time"]), float(p["climatology_time"]),
                           float(p["climatology_stride"]))


@dataclass
class TwinSetup:
    model: object
    times: np.ndarray  # times[k] is the time of cycle k (times[0] is the start)
    truth: np.ndarray  # (cycles + K + 1, n)
    obs_values: np.ndarray  # (cycles + K + 1, m); row 0 unused
    H: ObservationOperator
    variances: np.ndarray
    initial_ensemble: np.ndarray

    def observation(self, k: int) -> Observation:
        return Observation(self.obs_values[k], self.variances)


def synthesize_truth_and_obs(cfg: ExperimentConfig, streams=None) -> TwinSetup:
    streams = rng_streams(cfg.seed) if streams is None else streams
    model = build_model(cfg)
    f = cfg.filter
    K = cfg.localization.K if cfg.localization.mode == "adaptive" else 0
    ncyc = f.cycles + K
    idx = cfg.observed_indices()
    H = ObservationOperator(idx, model.n)
    N = f.ensemble_size

    if cfg.model.kind == "qg":
        clim_seed = int(streams["truth"].integers(2**63))
        pool = qg_climatology(cfg, clim_seed)
        x0 = np.array(pool[:, -1])
        picks = streams["ensemble"].choice(pool.shape[1] - 1, size=N, replace=N > pool.shape[1] - 1)
        ens0 = np.array(pool[:, picks])
    else:
        x0 = lorenz96_initial_condition(model, level=cfg.model.get("F" if cfg.model.kind == "lorenz96" else "base"))
        spread = cfg.obs_std if f.initial_spread is None else f.initial_spread
        ens0 = x0[:, None] + spread * streams["ensemble"].standard_normal((model.n, N))

    times = f.window * np.arange(ncyc + 1)
    truth = np.empty((ncyc + 1, model.n))
    truth[0] = x0
    x = x0
    for k in range(1, ncyc + 1):
        x = propagate_states(model, x, times[k - 1], times[k])
        truth[k] = x
    var = cfg.observations.variance
    noise = streams["obs"].standard_normal((ncyc + 1, H.m))
    obs = truth[:, idx] + math.sqrt(var) * noise
    # a zero variance gives exact observations; the filter still needs R > 0
    variances = np.full(H.m, var if var > 0 else 1e-12)
    return TwinSetup(model, times, truth, obs, H, variances, ens0)


@dataclass
class ExperimentRecord:
    config: ExperimentConfig
    g: int
    times: list = field(default_factory=list)
    rmse_analysis: list = field(default_factory=list)
    rmse_forecast: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    cost_initial: list = field(default_factory=list)
    iters: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    analysis_mean: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    candidate_grid: tuple = ()
    diverged: bool = False
    reason: str = ""

    @property
    def cycles_done(self) -> int:
        return len(self.rmse_analysis)

    @property
    def spinup(self) -> int:
        return self.config.filter.spinup

    @property
    def aggregate_rmse(self) -> float:
        if self.cycles_done <= self.spinup:
            return float("nan")
        return compute_rmse(np.array(self.truth), np.array(self.analysis_mean), (self.spinup, self.cycles_done))

    def rows(self):
        """Per-cycle CSV rows (cycle numbers start at 1)."""
        for k in range(self.cycles_done):
            r = list(self.radii[k]) if self.g else []
            yield [k + 1, self.times[k], self.rmse_analysis[k], self.rmse_forecast[k], *r,
                   self.cost[k], self.iters[k]]

    def header(self):
        return (["cycle", "time", "rmse_analysis", "rmse_forecast"]
                + [f"radius_{j + 1}" for j in range(self.g)] + ["cost", "iters"])


def _rmse(a, b) -> float:
    e = a - b
    return float(np.sqrt(np.mean(e * e)))


def run_experiment(cfg: ExperimentConfig, setup: TwinSetup | None = None) -> ExperimentRecord:
    """Propagate, inflate, pick the taper, analyse and record, once per cycle."""
    setup = synthesize_truth_and_obs(cfg) if setup is None else setup
    model = setup.model
    f = cfg.filter
    loc = cfg.localization
    mode = loc.mode
    mapping = cfg.group_mapping()
    spec = LocalizationSpec(mapping, loc.mean, loc.function)
    g = 0 if mode == "free" else (1 if mode == "oracle" and cfg.oracle.mode == "univariate" else mapping.g)
    rec = ExperimentRecord(cfg, g)
    H = setup.H
    idx = H.index_array

    if mode in ("constant", "adaptive"):
        const_r = mapping.prolong(cfg.radii() if mode == "constant" else cfg.prior().mean)
        const_xo = build_rho(model, const_r, loc.mean, loc.function, cols=idx)
        const_oo = build_rho(model, const_r, loc.mean, loc.function, rows=idx, cols=idx)
        const_ups = cfg.radii() if mode == "constant" else cfg.prior().mean
    if mode == "adaptive":
        prior = cfg.prior()
    if mode == "oracle":
        grid = cfg.oracle.grid
        ospec = OracleSearchSpec.for_model(cfg.model.kind, cfg.oracle.mode, cfg.oracle.sweeps)
        if grid is not None:
            ospec = OracleSearchSpec(cfg.oracle.mode, tuple(grid), cfg.oracle.sweeps)
        rec.candidate_grid = ospec.grid

    # the effective error std, so exact observations (stored as a tiny R) still give a usable threshold
    threshold = f.divergence_factor * math.sqrt(float(np.mean(setup.variances)))
    ens = Ensemble(setup.initial_ensemble)
    for k in range(1, f.cycles + 1):
        t0, t1 = setup.times[k - 1], setup.times[k]
        truth = setup.truth[k]
        try:
            fc = propagate(model, ens, t0, t1)
        except ModelBlowUp as exc:
            rec.diverged, rec.reason = True, f"cycle {k}: {exc}"
            break
        rmse_f = _rmse(fc.mean, truth)
        cost, cost0, iters = float("nan"), float("nan"), 0
        try:
            if mode == "free":
                xa, ups = fc, ()
            else:
                fc = inflate(fc, f.inflation)
                obs = setup.observation(k)
                if mode == "constant" or (mode == "adaptive" and k <= loc.warm_start_cycles):
                    rho_xo, rho_oo, ups = const_xo, const_oo, const_ups
                elif mode == "adaptive":
                    fourd = None
                    future = ()
                    if loc.K:
                        fourd = FourDSettings(K=loc.K, window=f.window, t0=t1)
                        future = [setup.observation(k + i) for i in range(1, loc.K + 1)]
                    res = adaptive_cycle(prior, fc, obs, H, spec, cfg.optimizer, model, fourd, future)
                    rho_xo, rho_oo, ups = res.rho_xo, res.rho_oo, res.upsilon
                    cost, cost0, iters = res.report.value, res.report.initial_value, res.report.iterations
                else:
                    osel = oracle_select(truth, fc, obs, H, spec, ospec, model)
                    ups = osel.upsilon
                    r = mapping.prolong(ups) if ups.size == mapping.g and ups.size > 1 else np.full(model.n, ups[0])
                    rho_xo = build_rho(model, r, loc.mean, loc.function, cols=idx)
                    rho_oo = build_rho(model, r, loc.mean, loc.function, rows=idx, cols=idx)
                    cost, iters = osel.rmse, osel.evaluations
                    rec.candidates.append(osel.candidates)
                xa = denkf_analysis(AnalysisInputs(fc, obs, H, rho_xo, rho_oo)).analysis
        except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
            rec.diverged, rec.reason = True, f"cycle {k}: {exc}"
            break
        rmse_a = _rmse(xa.mean, truth)
        rec.times.append(float(t1))
        rec.rmse_analysis.append(rmse_a)
        rec.rmse_forecast.append(rmse_f)
        rec.radii.append([float(u) for u in np.atleast_1d(ups)])
        rec.cost.append(float(cost))
        rec.cost_initial.append(float(cost0))
        rec.iters.append(int(iters))
        rec.truth.append(np.array(truth))
        rec.analysis_mean.append(np.array(xa.mean))
        ens = xa
        if not math.isfinite(rmse_a):
            rec.diverged, rec.reason = True, f"cycle {k}: non-finite analysis"
            break
        if mode != "free" and k > f.spinup and rmse_a > threshold:
            rec.diverged, rec.reason = True, f"cycle {k}: analysis RMSE {rmse_a:.3g} above {threshold:.3g}"
            break
    return rec
