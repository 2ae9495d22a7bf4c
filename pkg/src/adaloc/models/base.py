"""Uniform model interface and the explicit RK4 integrator."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np

from adaloc.ensemble import Ensemble


class ModelBlowUp(FloatingPointError):
    """Raised when an integration produces non-finite values."""

    def __init__(self, message, member=None):
        super().__init__(message)
        self.member = member


class ModelSystem(ABC):
    """A dynamical system ``dx/dt = f(t, x)`` with a physical distance between state components.

    ``tendency`` must accept either a single state of shape ``(n,)`` or an
    ensemble of shape ``(n, N)`` and act on every column independently.
    """

    n: int
    dt: float

    @abstractmethod
    def tendency(self, t: float, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def distances(self, rows=None, cols=None) -> np.ndarray:
        """Distance matrix between the state components ``rows`` and ``cols`` (all if None)."""

    def distance(self, i: int, j: int) -> float:
        for k in (i, j):
            if not 0 <= k < self.n:
                raise IndexError(f"state index {k} outside [0, {self.n})")
        return float(self.distances([i], [j])[0, 0])

    def advance(self, t: float, x: np.ndarray, dt: float, nsteps: int) -> np.ndarray:
        """Take ``nsteps`` RK4 steps of size ``dt``; subclasses may override with a compiled kernel."""
        for k in range(nsteps):
            x = rk4_step(self, t + k * dt, x, dt, check=False)
        return x


def rk4_step(model: ModelSystem, t: float, x, dt: float, check: bool = True) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    x = np.asarray(x, dtype=float)
    f = model.tendency
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + (0.5 * dt) * k1)
    k3 = f(t + 0.5 * dt, x + (0.5 * dt) * k2)
    k4 = f(t + dt, x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if check:
        _check_finite(out)
    return out


def _check_finite(x):
    if np.all(np.isfinite(x)):
        return
    if x.ndim == 1:
        raise ModelBlowUp("model blow-up: non-finite state", member=0)
    bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=0))[0])
    raise ModelBlowUp(f"model blow-up in ensemble member {bad}", member=bad)


def step_schedule(t0: float, t1: float, dt: float) -> tuple[int, float]:
    """Number of steps and the (possibly shortened) step that exactly spans ``[t0, t1]``."""
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    ratio = (t1 - t0) / dt
    nsteps = round(ratio)
    if nsteps >= 1 and abs(ratio - nsteps) <= 1e-9 * max(1.0, ratio):
        return nsteps, dt
    nsteps = math.ceil(ratio)
    return nsteps, (t1 - t0) / nsteps


def propagate_states(model: ModelSystem, x: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Integrate a state or a column-stacked set of states from ``t0`` to ``t1``."""
    nsteps, dt = step_schedule(t0, t1, model.dt)
    out = model.advance(t0, np.array(x, dtype=float), dt, nsteps)
    _check_finite(out)
    return out


def propagate(model: ModelSystem, ens, t0: float, t1: float) -> Ensemble:
    """Forecast every ensemble member from ``t0`` to ``t1`` (members are independent)."""
    members = ens.members if isinstance(ens, Ensemble) else np.asarray(ens, dtype=float)
    return Ensemble(propagate_states(model, members, t0, t1))
