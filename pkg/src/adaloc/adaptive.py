"""MAP estimation of localization radii under gamma priors.

For group radii ``u`` the cost is evaluated in observation space. With
``Y = H X`` the forecast anomalies in observation space,
``B = rho_oo o (Y Y^T) / (N - 1)``, ``S = B + R`` and the innovation ``d``::

    Z = d 1^T - Y / 2            W = S^{-1} Z
    G = d 1^T - Y - B W
    J = tr(W^T B W) / 2 + tr(G^T R^{-1} G) / 2 + sum_j (beta_j u_j - (alpha_j - 1) log u_j)

The first two terms are the per-member distances of the analysis from the
forecast (in the localized background norm) and from the observations.
Differentiating through ``S`` gives, with ``V = S^{-1} (d 1^T - Y)``,

    dJ/du_j = sum(dB/du_j o M) + beta_j - (alpha_j - 1) / u_j
    M       = W W^T / 2 - (V W^T + W V^T) / 2

so the gradient costs one Cholesky factorization and two triangular solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from adaloc.denkf import AnalysisInputs, cholesky_spd, denkf_analysis
from adaloc.ensemble import Ensemble, EnsembleError, Observation, ObservationOperator
from adaloc.localization import (
    DIFFERENTIABLE_KINDS,
    LocalizationError,
    LocalizationSpec,
    build_rho,
    prolong,
    radius_sensitivities,
    rho_from_distances,
)
from adaloc.models.base import ModelSystem, propagate_states

UPSILON_MIN = 1e-3


class PriorError(ValueError):
    pass


class OptimizationError(RuntimeError):
    pass


# allocation hook: receives the shape of every intermediate array formed by the cost and gradient
_ALLOCATION_HOOK = None


def set_allocation_hook(fn):
    """Install ``fn(shape)`` to audit intermediate array sizes (pass None to remove). Returns the old hook."""
    global _ALLOCATION_HOOK
    old, _ALLOCATION_HOOK = _ALLOCATION_HOOK, fn
    return old


def _track(*arrays):
    if _ALLOCATION_HOOK is not None:
        for a in arrays:
            _ALLOCATION_HOOK(np.shape(a))


def prior_to_alpha_beta(mean, variance):
    """Gamma shape and rate from a mean and a variance: ``alpha = mean^2 / var``, ``beta = mean / var``."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(mean <= 0) or np.any(variance <= 0):
        raise PriorError("prior mean and variance must be positive")
    if np.any(variance > mean * mean):
        raise PriorError("prior shape α < 1 unsupported (variance exceeds mean squared)")
    alpha = mean * mean / variance
    beta = mean / variance
    if alpha.ndim == 0:
        return float(alpha), float(beta)
    return alpha, beta


def alpha_beta_to_prior(alpha, beta):
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    mean, var = alpha / beta, alpha / (beta * beta)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


@dataclass(frozen=True)
class GammaPrior:
    """Independent gamma priors on the ``g`` group radii."""

    mean: np.ndarray
    variance: np.ndarray

    def __init__(self, mean, variance):
        m = np.atleast_1d(np.asarray(mean, dtype=float)).copy()
        v = np.atleast_1d(np.asarray(variance, dtype=float)).copy()
        if v.size == 1 and m.size > 1:
            v = np.full(m.shape, v[0])
        if m.size == 1 and v.size > 1:
            m = np.full(v.shape, m[0])
        if m.shape != v.shape or m.ndim != 1:
            raise PriorError("prior mean and variance must have one entry per group")
        prior_to_alpha_beta(m, v)
        m.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variance", v)

    @classmethod
    def from_alpha_beta(cls, alpha, beta) -> "GammaPrior":
        return cls(*alpha_beta_to_prior(np.atleast_1d(alpha), np.atleast_1d(beta)))

    @property
    def g(self) -> int:
        return self.mean.size

    @property
    def alpha(self) -> np.ndarray:
        return self.mean * self.mean / self.variance

    @property
    def beta(self) -> np.ndarray:
        return self.mean / self.variance

    @property
    def mode(self) -> np.ndarray:
        return (self.alpha - 1.0) / self.beta

    def term(self, upsilon) -> float:
        u = np.asarray(upsilon, dtype=float)
        return float(np.sum(self.beta * u - (self.alpha - 1.0) * np.log(u)))

    def grad(self, upsilon) -> np.ndarray:
        u = np.asarray(upsilon, dtype=float)
        return self.beta - (self.alpha - 1.0) / u


@dataclass(frozen=True)
class CostEvaluation:
    value: float
    grad: np.ndarray | None
    forecast_fit: float
    obs_fit: float
    prior: float
    future_fit: float = 0.0


@dataclass(frozen=True)
class OptimizerSettings:
    max_iters: int = 50
    tol: float = 1e-6
    lower_bound: float = UPSILON_MIN
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iters < 1 or self.max_backtracks < 1:
            raise ValueError("iteration budgets must be positive")
        if not (self.tol > 0 and self.lower_bound > 0 and self.armijo > 0):
            raise ValueError("tolerances and bounds must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")


@dataclass(frozen=True)
class FourDSettings:
    """Time-distributed extension: ``K`` future windows of length ``window`` starting at ``t0``."""

    K: int = 0
    window: float = 0.05
    t0: float = 0.0
    fd_scale: float = 1e-4

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if not (self.window > 0 and self.fd_scale > 0):
            raise ValueError("window and finite-difference scale must be positive")

    def fd_step(self, u: float) -> float:
        return self.fd_scale * max(1.0, abs(u))


class AdaptiveContext:
    """Forecast, observations and localization setup for one analysis cycle.

    The observation-space pieces (``Y``, ``d``, ``Y Y^T``, observed distances)
    are computed once and shared by every cost evaluation.
    """

    def __init__(self, model: ModelSystem, forecast: Ensemble, obs: Observation,
                 H: ObservationOperator, loc: LocalizationSpec, prior: GammaPrior):
        if forecast.n != model.n or H.n != model.n or loc.mapping.n != model.n:
            raise EnsembleError("model, forecast, operator and group mapping dimensions disagree")
        if obs.m != H.m:
            raise EnsembleError("observation count does not match the operator")
        if prior.g != loc.g:
            raise PriorError(f"prior has {prior.g} groups, localization has {loc.g}")
        if forecast.N < 2:
            raise EnsembleError("need at least two members")
        self.model = model
        self.forecast = forecast
        self.obs = obs
        self.H = H
        self.loc = loc
        self.prior = prior

    @cached_property
    def idx(self) -> np.ndarray:
        return self.H.index_array

    @cached_property
    def Y(self) -> np.ndarray:
        return self.forecast.anomalies[self.idx]

    @cached_property
    def d(self) -> np.ndarray:
        return self.obs.values - self.forecast.mean[self.idx]

    @cached_property
    def C_oo(self) -> np.ndarray:
        Y = self.Y
        C = Y @ Y.T / (Y.shape[1] - 1)
        return 0.5 * (C + C.T)

    @cached_property
    def dist_oo(self) -> np.ndarray:
        return np.ascontiguousarray(self.model.distances(self.idx, self.idx), dtype=float)

    @cached_property
    def obs_groups(self) -> np.ndarray:
        return self.loc.mapping.assignment[self.idx]

    @property
    def N(self) -> int:
        return self.forecast.N

    def radii(self, upsilon) -> np.ndarray:
        return prolong(self.loc.mapping, upsilon)

    def rho_oo(self, upsilon) -> np.ndarray:
        ro = self.radii(upsilon)[self.idx]
        rho = rho_from_distances(self.dist_oo, ro, ro, self.loc.mean)
        return np.triu(rho) + np.triu(rho, 1).T

    def rho_blocks(self, upsilon):
        r = self.radii(upsilon)
        rho_xo = build_rho(self.model, r, self.loc.mean, self.loc.loc, cols=self.idx)
        return rho_xo, self.rho_oo(upsilon)

    def analysis(self, upsilon) -> Ensemble:
        rho_xo, rho_oo = self.rho_blocks(upsilon)
        return denkf_analysis(AnalysisInputs(self.forecast, self.obs, self.H, rho_xo, rho_oo)).analysis


def _check_upsilon(ctx: AdaptiveContext, upsilon, lower=UPSILON_MIN) -> np.ndarray:
    u = np.atleast_1d(np.asarray(upsilon, dtype=float))
    if u.shape != (ctx.loc.g,):
        raise LocalizationError(f"expected {ctx.loc.g} radii, got shape {u.shape}")
    if not np.all(np.isfinite(u)) or np.any(u < lower):
        raise OptimizationError(f"radii must be finite and >= {lower}, got {u}")
    return u


def _evaluate(ctx: AdaptiveContext, upsilon, with_grad: bool, lower=UPSILON_MIN) -> CostEvaluation:
    u = _check_upsilon(ctx, upsilon, lower)
    rvar = ctx.obs.variances
    Y, d = ctx.Y, ctx.d
    B = ctx.rho_oo(u) * ctx.C_oo
    S = B.copy()
    S[np.diag_indices_from(S)] += rvar
    fac = cholesky_spd(S)
    N = Y.shape[1]
    D = d[:, None] - Y
    Z = d[:, None] - 0.5 * Y
    if with_grad:
        sol = sla.cho_solve(fac, np.hstack([Z, D]), check_finite=False)
        W, V = sol[:, :N], sol[:, N:]
    else:
        W = sla.cho_solve(fac, Z, check_finite=False)
    BW = B @ W
    G = D - BW
    _track(B, S, Z, D, W, BW, G)
    forecast_fit = 0.5 * float(np.sum(W * BW))
    obs_fit = 0.5 * float(np.sum(G * G / rvar[:, None]))
    prior = ctx.prior.term(u)
    grad = None
    if with_grad:
        if ctx.loc.mean not in DIFFERENTIABLE_KINDS:
            raise LocalizationError(f"non-differentiable combiner {ctx.loc.mean!r}")
        WV = W @ V.T
        M = 0.5 * (W @ W.T) - 0.5 * (WV + WV.T)
        ro = ctx.radii(u)[ctx.idx]
        t_row, t_col = radius_sensitivities(ctx.dist_oo, ro, ro, ctx.loc.mean)
        MC = M * ctx.C_oo
        _track(M, t_row, t_col, MC)
        # entry (i, k) depends on the group of i through t_row and on the group of k through t_col
        g = ctx.loc.g
        grp = ctx.obs_groups
        grad = (np.bincount(grp, weights=np.sum(MC * t_row, axis=1), minlength=g)
                + np.bincount(grp, weights=np.sum(MC * t_col, axis=0), minlength=g)
                + ctx.prior.grad(u))
    return CostEvaluation(
        value=forecast_fit + obs_fit + prior,
        grad=grad,
        forecast_fit=forecast_fit,
        obs_fit=obs_fit,
        prior=prior,
    )


def cost_3d(upsilon, ctx: AdaptiveContext) -> CostEvaluation:
    """Cost value and its three terms (no gradient)."""
    return _evaluate(ctx, upsilon, with_grad=False)


def grad_3d(upsilon, ctx: AdaptiveContext) -> np.ndarray:
    return _evaluate(ctx, upsilon, with_grad=True).grad


def cost_and_grad_3d(upsilon, ctx: AdaptiveContext) -> CostEvaluation:
    return _evaluate(ctx, upsilon, with_grad=True)


def future_misfit(ctx: AdaptiveContext, upsilon, fourd: FourDSettings, future_obs, model=None) -> float:
    """Sum over members and future windows of ``||y_k - H x_k||^2_{R^-1} / 2``, forecasting from the analysis."""
    model = ctx.model if model is None else model
    x = ctx.analysis(upsilon).members
    idx = ctx.idx
    total = 0.0
    t = fourd.t0
    for k in range(fourd.K):
        x = propagate_states(model, x, t, t + fourd.window)
        t = t + fourd.window
        y = future_obs[k]
        r = y.values[:, None] - x[idx]
        total += 0.5 * float(np.sum(r * r / y.variances[:, None]))
    return total


def cost_grad_4d(upsilon, ctx: AdaptiveContext, fourd: FourDSettings, future_obs=(), model=None,
                 with_grad: bool = True, lower: float = UPSILON_MIN) -> CostEvaluation:
    """Cost with ``K`` future observation windows; the extra gradient is a forward difference.

    With ``K = 0`` the 3D evaluation is returned unchanged.
    """
    base = _evaluate(ctx, upsilon, with_grad=with_grad, lower=lower)
    if fourd.K == 0:
        return base
    if len(future_obs) < fourd.K:
        raise ValueError(f"need {fourd.K} future observation sets, got {len(future_obs)}")
    u = np.atleast_1d(np.asarray(upsilon, dtype=float))
    pen = future_misfit(ctx, u, fourd, future_obs, model)
    grad = None
    if with_grad:
        extra = np.empty(u.size)
        for j in range(u.size):
            h = fourd.fd_step(u[j])
            up = u.copy()
            up[j] += h
            extra[j] = (future_misfit(ctx, up, fourd, future_obs, model) - pen) / h
        grad = base.grad + extra
    return CostEvaluation(
        value=base.forecast_fit + base.obs_fit + base.prior + pen,
        grad=grad,
        forecast_fit=base.forecast_fit,
        obs_fit=base.obs_fit,
        prior=base.prior,
        future_fit=pen,
    )


@dataclass
class MinimizeReport:
    upsilon: np.ndarray
    value: float
    initial_value: float
    iterations: int
    evaluations: int
    reason: str
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.reason in ("gradient", "step")


def minimize(settings: OptimizerSettings, prior: GammaPrior, ctx: AdaptiveContext,
             fourd: FourDSettings | None = None, future_obs=(), x0=None) -> MinimizeReport:
    """Projected gradient descent on ``[lower_bound, inf)^g`` with Armijo backtracking.

    Starts from the prior mean. Trial steps use the Barzilai-Borwein length
    when it is positive; the accepted cost sequence is non-increasing.
    """
    lb = settings.lower_bound
    evals = 0

    def f(u):
        nonlocal evals
        evals += 1
        if fourd is not None and fourd.K > 0:
            return cost_grad_4d(u, ctx, fourd, future_obs, lower=lb)
        return _evaluate(ctx, u, with_grad=True, lower=lb)

    x = np.maximum(np.array(prior.mean if x0 is None else x0, dtype=float), lb)
    ev = f(x)
    if not (math.isfinite(ev.value) and np.all(np.isfinite(ev.grad))):
        raise OptimizationError("non-finite cost at the initial point")
    J0 = ev.value
    history = [ev.value]
    g = ev.grad
    step = 0.5 * np.max(x) / max(np.max(np.abs(g)), 1e-300)
    reason = "max_iters"
    it = 0
    for it in range(1, settings.max_iters + 1):
        pg = x - np.maximum(x - g, lb)
        if np.max(np.abs(pg)) <= settings.tol * max(1.0, abs(ev.value)):
            reason = "gradient"
            it -= 1
            break
        accepted = False
        t = step
        for _ in range(settings.max_backtracks):
            xt = np.maximum(x - t * g, lb)
            s = xt - x
            if not np.any(s):
                break
            try:
                et = f(xt)
            except (np.linalg.LinAlgError, FloatingPointError):
                t *= settings.shrink
                continue
            if math.isfinite(et.value) and et.value <= ev.value + settings.armijo * float(g @ s):
                accepted = True
                break
            t *= settings.shrink
        if not accepted:
            reason = "step"
            it -= 1
            break
        yk = et.grad - g
        sy = float(s @ yk)
        step = float(s @ s) / sy if sy > 0 else 2.0 * t
        x, ev, g = xt, et, et.grad
        history.append(ev.value)
    return MinimizeReport(upsilon=x, value=ev.value, initial_value=J0, iterations=it,
                          evaluations=evals, reason=reason, history=history)


@dataclass(frozen=True)
class AdaptiveResult:
    rho_xo: np.ndarray
    rho_oo: np.ndarray
    upsilon: np.ndarray
    radii: np.ndarray
    report: MinimizeReport


def adaptive_cycle(prior: GammaPrior, forecast: Ensemble, obs: Observation, H: ObservationOperator,
                   loc: LocalizationSpec, settings: OptimizerSettings, model: ModelSystem,
                   fourd: FourDSettings | None = None, future_obs=()) -> AdaptiveResult:
    """Choose radii by MAP estimation and build the corresponding taper blocks."""
    ctx = AdaptiveContext(model, forecast, obs, H, loc, prior)
    report = minimize(settings, prior, ctx, fourd, future_obs)
    rho_xo, rho_oo = ctx.rho_blocks(report.upsilon)
    return AdaptiveResult(rho_xo, rho_oo, report.upsilon, ctx.radii(report.upsilon), report)
