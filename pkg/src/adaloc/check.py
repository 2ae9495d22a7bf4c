"""Fast self-check of the numerical invariants (used by ``adaloc check``)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from adaloc import _backend
from adaloc.adaptive import AdaptiveContext, GammaPrior, cost_3d, grad_3d
from adaloc.ensemble import Ensemble, Observation, ObservationOperator
from adaloc.localization import DIFFERENTIABLE_KINDS, GroupMapping, LocalizationSpec, build_rho
from adaloc.models import Lorenz96, Lorenz96Config, QGConfig, QuasiGeostrophic, lorenz96_tendency, rk4_step
from adaloc.models.base import ModelSystem
from adaloc.models.qg import arakawa_jacobian, laplacian


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


class _Exp(ModelSystem):
    n = 1
    dt = 0.1

    def tendency(self, t, x):
        return x

    def distances(self, rows=None, cols=None):
        return np.zeros((1, 1))


def random_instance(rng, kind=None, max_n=12, max_m=8, max_N=6, max_g=3):
    """Small random adaptive-localization problem on a Lorenz'96 ring."""
    n = int(rng.integers(4, max_n + 1))
    m = int(rng.integers(1, min(max_m, n) + 1))
    N = int(rng.integers(2, max_N + 1))
    g = int(rng.integers(1, min(max_g, n) + 1))
    kind = kind or DIFFERENTIABLE_KINDS[int(rng.integers(len(DIFFERENTIABLE_KINDS)))]
    model = Lorenz96(Lorenz96Config(n=n))
    ens = Ensemble(2.0 * rng.standard_normal((n, N)))
    H = ObservationOperator(np.sort(rng.choice(n, m, replace=False)), n)
    obs = Observation(2.0 * rng.standard_normal(m), rng.uniform(0.5, 2.0, m))
    mapping = GroupMapping(np.concatenate([np.arange(g), rng.integers(0, g, n - g)]), g)
    pm = rng.uniform(0.5, 4.0, g)
    prior = GammaPrior(pm, pm * pm * rng.uniform(0.1, 1.0, g))
    ctx = AdaptiveContext(model, ens, obs, H, LocalizationSpec(mapping, kind), prior)
    return ctx, rng.uniform(0.5, 4.0, g)


def gradient_error(ctx, u) -> float:
    """Largest relative difference between the analytic gradient and central differences."""
    grad = grad_3d(u, ctx)
    worst = 0.0
    for j in range(u.size):
        h = 1e-6 * max(1.0, u[j])
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        fd = (cost_3d(up, ctx).value - cost_3d(um, ctx).value) / (2 * h)
        worst = max(worst, abs(fd - grad[j]) / max(abs(grad[j]), abs(fd), 1e-8))
    return worst


def check_gradient(instances=20, seed=0):
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(instances):
        ctx, u = random_instance(rng, DIFFERENTIABLE_KINDS[i % 4])
        errs.append(gradient_error(ctx, u))
    worst = max(errs)
    return worst < 1e-5, f"max relative error {worst:.2e} over {instances} instances"


def check_psd(trials=50, seed=0):
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(trials):
        n = int(rng.integers(4, 11))
        A = rng.standard_normal((n, n))
        P = A @ A.T
        model = Lorenz96(Lorenz96Config(n=n))
        radii = rng.uniform(0.5, 4.0, n)
        for kind in DIFFERENTIABLE_KINDS:
            rho = build_rho(model, radii, kind)
            lam = np.linalg.eigvalsh(rho * P).min() / np.trace(P)
            worst = min(worst, lam)
    return worst >= -1e-10, f"min eigenvalue / trace = {worst:.3e}"


def conservation_defects(psi, q, h):
    """Relative size of the three discrete sums the Arakawa Jacobian should annihilate."""
    J = arakawa_jacobian(psi, q, h)
    return [abs(np.sum(J)) / np.sum(np.abs(J)),
            abs(np.sum(psi * J)) / np.sum(np.abs(psi * J)),
            abs(np.sum(q * J)) / np.sum(np.abs(q * J))]


def check_arakawa(seed=0, G=17):
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal((G, G))
    q = rng.standard_normal((G, G))
    # the array's outer ring plays the role of the wall, where the stream function is zero
    psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
    worst = max(conservation_defects(psi, q, 1.0 / (G + 1)))
    return worst < 1e-10, f"largest relative conservation defect {worst:.2e}"


def check_helmholtz(G=17, seed=0):
    model = QuasiGeostrophic(QGConfig(grid=G))
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal((G, G))
    q = model.vorticity(psi)
    back = model.helmholtz_solve(q)
    err = np.abs(back - psi).max() / np.abs(psi).max()
    res = np.abs(laplacian(back, model.h) - model.cfg.F * back - q).max() / np.abs(q).max()
    return max(err, res) < 1e-8, f"recovery error {err:.2e}, residual {res:.2e}"


def check_rk4_order():
    model = _Exp()
    errs = []
    for dt in (0.1, 0.05, 0.025):
        x = np.array([1.0])
        steps = int(round(1.0 / dt))
        for k in range(steps):
            x = rk4_step(model, k * dt, x, dt)
        errs.append(abs(x[0] - np.e))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    return bool(np.all(orders >= 3.9)), "observed orders " + ", ".join(f"{o:.3f}" for o in orders)


def check_l96_equilibrium():
    cfg = Lorenz96Config()
    t = lorenz96_tendency(cfg, 0.0, np.full(cfg.n, cfg.F))
    return bool(np.all(t == 0.0)), f"max |tendency| {np.abs(t).max():.1e}"


def check_backends(seed=0):
    if not _backend.compiled_available():
        return True, "compiled kernels not built; fallback only"
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(rng.standard_normal((40, 5)) + 8)
    a = _backend.get("l96_advance", "compiled")(x, 0.0, 0.01, 20, 8.0, 4.0, 2 * np.pi, 4)
    b = _backend.get("l96_advance", "python")(x, 0.0, 0.01, 20, 8.0, 4.0, 2 * np.pi, 4)
    d = np.abs(a - b).max()
    return d < 1e-12, f"compiled vs python Lorenz'96 difference {d:.1e}"


CHECKS = {
    "gradient": check_gradient,
    "psd": check_psd,
    "arakawa": check_arakawa,
    "helmholtz": check_helmholtz,
    "rk4_order": check_rk4_order,
    "l96_equilibrium": check_l96_equilibrium,
    "backends": check_backends,
}


def run_checks(names=None) -> list[CheckResult]:
    out = []
    for name in names or CHECKS:
        t = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t))
    return out
