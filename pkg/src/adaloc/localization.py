"""Schur-product localization: tapers, mean functions, radius groups and the taper matrix.

Entry ``(i, k)`` of the taper combines the two one-sided weights of a
pair of components with (possibly) different radii::

    rho[i, k] = m(l(d(i, k) / r_i), l(d(i, k) / r_k))

With equal radii every mean function collapses to the plain taper.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adaloc._backend import kernels

MEAN_KINDS = ("min", "max", "mean", "sqrt", "rms", "harm")
DIFFERENTIABLE_KINDS = ("mean", "sqrt", "rms", "harm")
LOC_FUNCTIONS = ("gauss",)


class LocalizationError(ValueError):
    pass


def mean_code(kind: str) -> int:
    try:
        return MEAN_KINDS.index(kind)
    except ValueError:
        raise LocalizationError(f"unknown mean function {kind!r}; expected one of {MEAN_KINDS}") from None


def gauss_loc(u):
    """Gaussian taper ``exp(-u^2 / 2)`` for scaled distances ``u >= 0``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise LocalizationError("scaled distance must be non-negative")
    out = np.exp(-0.5 * u * u)
    return float(out) if out.ndim == 0 else out


def gauss_loc_dr(dist, r):
    """Derivative of ``exp(-(d/r)^2 / 2)`` with respect to the radius ``r``."""
    dist = np.asarray(dist, dtype=float)
    r = np.asarray(r, dtype=float)
    u = dist / r
    return np.exp(-0.5 * u * u) * u * u / r


def combine(kind: str, a, b):
    """Mean function ``m(a, b)`` of two taper values.

    All kinds are commutative, idempotent (``m(a, a) == a`` exactly) and lie
    between ``min(a, b)`` and ``max(a, b)``. ``harm(0, 0)`` is 0.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise LocalizationError("mean functions take non-negative arguments")
    shape = np.broadcast_shapes(a_arr.shape, b_arr.shape)
    aa = np.ascontiguousarray(np.broadcast_to(a_arr, shape).ravel())
    bb = np.ascontiguousarray(np.broadcast_to(b_arr, shape).ravel())
    out = np.asarray(kernels.combine_array(mean_code(kind), aa, bb)).reshape(shape)
    return float(out) if out.ndim == 0 else out


def combine_scaled_partials(kind: str, a, b):
    """``a * dm/da`` and ``b * dm/db`` for the differentiable mean functions.

    The scaled form stays finite when a taper value underflows to zero.
    """
    if kind not in DIFFERENTIABLE_KINDS:
        raise LocalizationError(f"non-differentiable combiner {kind!r}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "mean":
            pa, pb = 0.5 * a, 0.5 * b
        elif kind == "sqrt":
            m = np.sqrt(a) * np.sqrt(b)
            pa = pb = 0.5 * m
        elif kind == "rms":
            m = np.sqrt(0.5 * (a * a + b * b))
            pa = np.where(m > 0, 0.5 * a * a / m, 0.0)
            pb = np.where(m > 0, 0.5 * b * b / m, 0.0)
        else:
            s = a + b
            m = np.where(s > 0, 2.0 * a * b / s, 0.0)
            pa = np.where(s > 0, m * b / s, 0.0)
            pb = np.where(s > 0, m * a / s, 0.0)
    return pa, pb


@dataclass(frozen=True)
class GroupMapping:
    """Assignment of each state component to one of ``g`` radius groups (0-based ids)."""

    assignment: np.ndarray
    g: int

    def __init__(self, assignment, g: int | None = None):
        a = np.asarray(assignment, dtype=np.int64).ravel()
        g = int(a.max()) + 1 if g is None else int(g)
        if a.size == 0 or a.min() < 0 or a.max() >= g:
            raise LocalizationError(f"group ids must lie in [0, {g})")
        if np.unique(a).size != g:
            raise LocalizationError("every group must own at least one component")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.assignment.size

    @classmethod
    def univariate(cls, n: int) -> "GroupMapping":
        return cls(np.zeros(n, dtype=np.int64), 1)

    @classmethod
    def modulo(cls, n: int, g: int) -> "GroupMapping":
        """Component ``i`` goes to group ``i mod g``."""
        return cls(np.arange(n) % g, g)

    @classmethod
    def blocks(cls, n: int, g: int) -> "GroupMapping":
        """``g`` contiguous blocks of (nearly) equal size."""
        return cls(np.arange(n) * g // n, g)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def prolong(self, upsilon) -> np.ndarray:
        return prolong(self, upsilon)

    def restrict(self, radii) -> np.ndarray:
        """Group-wise read-back of a prolonged radius vector (first member of each group)."""
        radii = np.asarray(radii, dtype=float)
        first = np.array([self.members(j)[0] for j in range(self.g)])
        return radii[first]


def prolong(mapping: GroupMapping, upsilon) -> np.ndarray:
    """Expand ``g`` group radii to one radius per state component."""
    ups = np.atleast_1d(np.asarray(upsilon, dtype=float))
    if ups.size != mapping.g:
        raise LocalizationError(f"expected {mapping.g} radii, got {ups.size}")
    return ups[mapping.assignment]


def _radii(model_n, radii):
    r = np.asarray(radii, dtype=float)
    if r.ndim == 0:
        r = np.full(model_n, float(r))
    if r.shape != (model_n,):
        raise LocalizationError(f"need one radius per state component ({model_n}), got shape {r.shape}")
    if not np.all(r > 0):
        raise LocalizationError("localization radii must be positive")
    return r


def _check_loc(loc):
    if loc not in LOC_FUNCTIONS:
        raise LocalizationError(f"unknown localization function {loc!r}; expected one of {LOC_FUNCTIONS}")


def build_rho(model, radii, mean: str = "mean", loc: str = "gauss", rows=None, cols=None) -> np.ndarray:
    """Taper matrix (or the ``rows x cols`` block of it) for per-component radii.

    ``radii`` is a scalar (univariate) or one radius per state component.
    The full matrix is symmetric with a unit diagonal.
    """
    _check_loc(loc)
    r = _radii(model.n, radii)
    code = mean_code(mean)
    ri = r if rows is None else r[np.asarray(rows)]
    rk = r if cols is None else r[np.asarray(cols)]
    dist = np.ascontiguousarray(model.distances(rows, cols), dtype=float)
    rho = np.asarray(kernels.rho_block(dist, np.ascontiguousarray(ri), np.ascontiguousarray(rk), code))
    if rows is None and cols is None:
        rho = np.triu(rho) + np.triu(rho, 1).T
    return rho


def rho_from_distances(dist, r_rows, r_cols, mean: str = "mean") -> np.ndarray:
    """Taper block from a precomputed distance block and the radii of its rows and columns."""
    return np.asarray(kernels.rho_block(np.ascontiguousarray(dist, dtype=float),
                                        np.ascontiguousarray(r_rows, dtype=float),
                                        np.ascontiguousarray(r_cols, dtype=float),
                                        mean_code(mean)))


def radius_sensitivities(dist, r_rows, r_cols, mean: str = "mean"):
    """Partial derivatives of each taper entry with respect to its row radius and its column radius.

    Returns ``(T_row, T_col)`` with ``T_row[i, k] = d rho[i, k] / d r_i`` and
    ``T_col[i, k] = d rho[i, k] / d r_k``.
    """
    dist = np.asarray(dist, dtype=float)
    ri = np.asarray(r_rows, dtype=float)[:, None]
    rk = np.asarray(r_cols, dtype=float)[None, :]
    a = gauss_loc(dist / ri)
    b = gauss_loc(dist / rk)
    pa, pb = combine_scaled_partials(mean, a, b)
    # d l(d/r)/dr = l * d^2 / r^3, so dm/dr_i = (a dm/da) * d^2 / r_i^3
    d2 = dist * dist
    return pa * d2 / ri**3, pb * d2 / rk**3


def drho_dupsilon(model, mapping: GroupMapping, upsilon, j: int, mean: str = "mean",
                  loc: str = "gauss", rows=None, cols=None) -> np.ndarray:
    """Element-wise derivative of the taper with respect to the radius of group ``j``."""
    _check_loc(loc)
    if not 0 <= j < mapping.g:
        raise LocalizationError(f"group index {j} outside [0, {mapping.g})")
    r = _radii(model.n, prolong(mapping, upsilon))
    rows = np.arange(model.n) if rows is None else np.asarray(rows)
    cols = np.arange(model.n) if cols is None else np.asarray(cols)
    t_row, t_col = radius_sensitivities(model.distances(rows, cols), r[rows], r[cols], mean)
    in_i = (mapping.assignment[rows] == j)[:, None]
    in_k = (mapping.assignment[cols] == j)[None, :]
    return np.where(in_i, t_row, 0.0) + np.where(in_k, t_col, 0.0)


def localize_cov(rho, cov) -> np.ndarray:
    """Schur (element-wise) product of a taper and a covariance block."""
    rho = np.asarray(rho, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if rho.shape != cov.shape:
        raise LocalizationError(f"shape mismatch {rho.shape} vs {cov.shape}")
    return rho * cov


@dataclass(frozen=True)
class LocalizationSpec:
    """Everything needed to build a taper: function, mean function, groups and radii."""

    mapping: GroupMapping
    mean: str = "mean"
    loc: str = "gauss"

    def __post_init__(self):
        mean_code(self.mean)
        _check_loc(self.loc)

    @property
    def g(self) -> int:
        return self.mapping.g

    def blocks(self, model, upsilon, obs_idx):
        """``rho[:, obs]`` and ``rho[obs, obs]`` for group radii ``upsilon``."""
        r = prolong(self.mapping, upsilon)
        return (build_rho(model, r, self.mean, self.loc, cols=obs_idx),
                build_rho(model, r, self.mean, self.loc, rows=obs_idx, cols=obs_idx))
