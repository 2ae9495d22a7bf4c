"""Lorenz'96 and its multivariate (time- and index-dependent forcing) variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adaloc._backend import kernels
from adaloc.models.base import ModelSystem, propagate_states

PERTURBED_INDEX = 19  # component 20 in 1-based numbering


@dataclass(frozen=True)
class Lorenz96Config:
    n: int = 40
    F: float = 8.0
    dt: float = 0.01

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("Lorenz'96 needs n >= 4")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class MultivariateLorenz96Config:
    n: int = 40
    base: float = 8.0
    amplitude: float = 4.0
    omega: float = 2.0 * np.pi
    q: int = 4
    dt: float = 0.01

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("Lorenz'96 needs n >= 4")
        if self.q < 1 or self.n % self.q:
            raise ValueError(f"q={self.q} must be a positive divisor of n={self.n}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def cyclic_distance(n: int, i, j):
    """Shortest distance between components ``i`` and ``j`` on a ring of ``n`` (0-based)."""
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any((i < 0) | (i >= n) | (j < 0) | (j >= n)):
        raise IndexError(f"index outside [0, {n})")
    d = np.abs(i - j)
    out = np.minimum(d, n - d)
    return out.astype(float) if out.ndim else float(out)


def lorenz96_tendency(cfg: Lorenz96Config, t, x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != cfg.n:
        raise ValueError(f"state has length {x.shape[0]}, expected {cfg.n}")
    return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + cfg.F


def multivariate_forcing(cfg: MultivariateLorenz96Config, t, i):
    """Forcing of component ``i`` (0-based) at time ``t``; oscillates in ``base +- amplitude``."""
    phase = (np.asarray(i) % cfg.q) / cfg.q
    return cfg.base + cfg.amplitude * np.cos(cfg.omega * (t + phase))


class _Ring(ModelSystem):
    def distances(self, rows=None, cols=None):
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        cols = np.arange(self.n) if cols is None else np.asarray(cols)
        return cyclic_distance(self.n, rows[:, None], cols[None, :])


class Lorenz96(_Ring):
    def __init__(self, cfg: Lorenz96Config | None = None, **kwargs):
        self.cfg = cfg or Lorenz96Config(**kwargs)
        self.n = self.cfg.n
        self.dt = self.cfg.dt

    def tendency(self, t, x):
        return lorenz96_tendency(self.cfg, t, x)

    def advance(self, t, x, dt, nsteps):
        x2 = np.ascontiguousarray(x if x.ndim == 2 else x[:, None], dtype=float)
        out = kernels.l96_advance(x2, float(t), float(dt), int(nsteps), self.cfg.F, 0.0, 0.0, 1)
        return out if x.ndim == 2 else out[:, 0]

    def initial_condition(self) -> np.ndarray:
        return lorenz96_initial_condition(self)


class MultivariateLorenz96(_Ring):
    def __init__(self, cfg: MultivariateLorenz96Config | None = None, **kwargs):
        self.cfg = cfg or MultivariateLorenz96Config(**kwargs)
        self.n = self.cfg.n
        self.dt = self.cfg.dt

    def forcing(self, t):
        return multivariate_forcing(self.cfg, t, np.arange(self.n))

    def tendency(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"state has length {x.shape[0]}, expected {self.n}")
        F = self.forcing(t)
        if x.ndim == 2:
            F = F[:, None]
        return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + F

    def advance(self, t, x, dt, nsteps):
        c = self.cfg
        x2 = np.ascontiguousarray(x if x.ndim == 2 else x[:, None], dtype=float)
        out = kernels.l96_advance(x2, float(t), float(dt), int(nsteps), c.base, c.amplitude, c.omega, c.q)
        return out if x.ndim == 2 else out[:, 0]

    def initial_condition(self) -> np.ndarray:
        return lorenz96_initial_condition(self, level=self.cfg.base)


def lorenz96_start(n: int, level: float = 8.0, nudged: float = 8.008) -> np.ndarray:
    """The uniform state with component 20 nudged (clamped to the last component if n < 20)."""
    x = np.full(n, float(level))
    x[min(PERTURBED_INDEX, n - 1)] = nudged
    return x


def lorenz96_initial_condition(model, level: float = 8.0, spin: float = 1.0) -> np.ndarray:
    """Start state after one time unit of free integration, which is enough to leave the fixed point."""
    return propagate_states(model, lorenz96_start(model.n, level, level + 0.008), 0.0, spin)
