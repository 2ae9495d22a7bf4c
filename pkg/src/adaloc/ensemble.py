"""Ensemble containers, sample statistics and observation-space projections.

States are stored column-wise: an ensemble of ``N`` members of an ``n``
dimensional model is an ``(n, N)`` array. Observation operators are linear
row selections described by 0-based state indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class EnsembleError(ValueError):
    pass


class Ensemble:
    """Immutable ensemble of model states (columns are members).

    The member array is copied and frozen on construction, so the cached
    mean and anomalies can never go stale.
    """

    def __init__(self, members):
        members = np.array(members, dtype=float)
        if members.ndim == 1:
            members = members[:, None]
        if members.ndim != 2:
            raise EnsembleError(f"members must be an (n, N) array, got shape {members.shape}")
        if members.shape[1] == 0 or members.shape[0] == 0:
            raise EnsembleError("empty ensemble")
        members.setflags(write=False)
        self._members = members

    @property
    def members(self) -> np.ndarray:
        return self._members

    @property
    def n(self) -> int:
        return self._members.shape[0]

    @property
    def N(self) -> int:
        return self._members.shape[1]

    @cached_property
    def mean(self) -> np.ndarray:
        m = self._members.mean(axis=1)
        m.setflags(write=False)
        return m

    @cached_property
    def anomalies(self) -> np.ndarray:
        if self.N < 2:
            raise EnsembleError("anomalies need at least two members")
        a = self._members - self.mean[:, None]
        a.setflags(write=False)
        return a

    @classmethod
    def from_mean_anomalies(cls, mean, anomalies) -> "Ensemble":
        return cls(np.asarray(mean, dtype=float)[:, None] + np.asarray(anomalies, dtype=float))

    def __repr__(self):
        return f"Ensemble(n={self.n}, N={self.N})"


def _members(ens) -> np.ndarray:
    if isinstance(ens, Ensemble):
        return ens.members
    arr = np.asarray(ens, dtype=float)
    if arr.ndim != 2:
        raise EnsembleError("expected an Ensemble or an (n, N) array")
    return arr


def ensemble_mean(ens) -> np.ndarray:
    if isinstance(ens, Ensemble):
        return np.array(ens.mean)
    x = _members(ens)
    if x.size == 0 or x.shape[1] == 0:
        raise EnsembleError("empty ensemble")
    return x.mean(axis=1)


def ensemble_anomalies(ens) -> np.ndarray:
    """Deviations of the members from the ensemble mean, ``x - mean 1^T``."""
    if isinstance(ens, Ensemble):
        return np.array(ens.anomalies)
    x = _members(ens)
    if x.shape[1] < 2:
        raise EnsembleError("anomalies need at least two members")
    return x - x.mean(axis=1, keepdims=True)


def ensemble_covariance(ens) -> np.ndarray:
    """Unbiased sample covariance ``X X^T / (N - 1)``.

    Only meant for small ``n``; the filter never forms this matrix.
    """
    X = ensemble_anomalies(ens)
    P = X @ X.T / (X.shape[1] - 1)
    return 0.5 * (P + P.T)


def inflate(ens, alpha: float) -> Ensemble:
    """Multiplicative inflation of the anomalies about an unchanged mean."""
    if not alpha >= 1.0:
        raise EnsembleError(f"inflation factor must be >= 1, got {alpha}")
    ens = ens if isinstance(ens, Ensemble) else Ensemble(ens)
    if alpha == 1.0:
        return ens
    return Ensemble.from_mean_anomalies(ens.mean, alpha * ens.anomalies)


@dataclass(frozen=True)
class ObservationOperator:
    """Linear selection operator ``H``: picks ``indices`` (0-based) out of an ``n``-vector."""

    indices: tuple
    n: int

    def __init__(self, indices, n: int):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise EnsembleError("observation operator selects nothing")
        if idx.min() < 0 or idx.max() >= n:
            raise EnsembleError(f"observation index out of range [0, {n})")
        if np.unique(idx).size != idx.size:
            raise EnsembleError("duplicate observation indices")
        object.__setattr__(self, "indices", tuple(int(i) for i in idx))
        object.__setattr__(self, "n", int(n))

    @property
    def m(self) -> int:
        return len(self.indices)

    @cached_property
    def index_array(self) -> np.ndarray:
        a = np.array(self.indices, dtype=np.int64)
        a.setflags(write=False)
        return a

    def matrix(self) -> np.ndarray:
        """Dense 0/1 matrix form, for tests and small problems."""
        H = np.zeros((self.m, self.n))
        H[np.arange(self.m), self.index_array] = 1.0
        return H

    def __call__(self, x):
        return np.asarray(x)[self.index_array]


def project_to_obs(obj, H: ObservationOperator):
    """Restrict a state object to the observed components.

    Vectors and ensembles are restricted row-wise (``Hx``, ``HX``); plain
    2-D arrays are treated as state-space matrices and restricted on both
    axes (``H P H^T``).
    """
    idx = H.index_array
    if isinstance(obj, Ensemble):
        if obj.n != H.n:
            raise EnsembleError("ensemble dimension does not match the operator")
        return Ensemble(obj.members[idx])
    arr = np.asarray(obj, dtype=float)
    if arr.shape[0] != H.n:
        raise EnsembleError(f"leading dimension {arr.shape[0]} != operator dimension {H.n}")
    if arr.ndim == 1:
        return arr[idx]
    if arr.ndim == 2:
        if arr.shape[1] != H.n:
            raise EnsembleError("matrix projection needs a square (n, n) matrix")
        return arr[np.ix_(idx, idx)]
    raise EnsembleError("cannot project arrays with more than two dimensions")


@dataclass(frozen=True)
class Observation:
    """Observed values with a diagonal error covariance (one variance per entry)."""

    values: np.ndarray
    variances: np.ndarray = field(repr=False)

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.values, dtype=float))
        r = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if r.size == 1 and y.size > 1:
            r = np.full(y.shape, float(r[0]))
        if y.shape != r.shape or y.ndim != 1:
            raise EnsembleError("observation values and variances must be equal-length vectors")
        if not np.all(r > 0):
            raise EnsembleError("observation error variances must be strictly positive")
        y.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "variances", r)

    @property
    def m(self) -> int:
        return self.values.size
