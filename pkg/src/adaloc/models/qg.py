"""1.5-layer quasi-geostrophic model on the unit square with homogeneous Dirichlet boundaries.

Prognostic equation for the potential vorticity ``q``::

    q_t = -psi_x - eps * J(psi, q) - A * lap^3(psi) + 2 pi sin(2 pi y)
    lap(psi) - F psi = q

The interior of a ``(G + 2) x (G + 2)`` node grid is discretised with
second-order central differences (``h = 1 / (G + 1)``); ``J`` is the
nine-point Arakawa Jacobian. Fields are ``(G, G)`` arrays (or ``(G, G, N)``
stacks) indexed ``[iy, ix]``.

The assimilated state vector is the stream function ``psi`` flattened in
row-major order; the model advances ``q`` internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from adaloc._backend import kernels
from adaloc.models.base import ModelSystem, propagate_states


@dataclass(frozen=True)
class QGConfig:
    grid: int = 33
    F: float = 1600.0
    eps: float = 1e-5
    A: float = 2e-11
    dt: float = 1.0

    def __post_init__(self):
        if self.grid < 8:
            raise ValueError("QG grid must be at least 8x8")
        if not self.F > 0:
            raise ValueError("F must be positive for the Helmholtz operator to be definite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def h(self) -> float:
        return 1.0 / (self.grid + 1)


def laplacian_matrix(G: int, h: float) -> sp.csr_matrix:
    """Five-point Laplacian on the G x G interior, zero Dirichlet data."""
    T = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(G, G))
    I = sp.identity(G)
    return ((sp.kron(I, T) + sp.kron(T, I)) / (h * h)).tocsr()


def helmholtz_matrix(G: int, h: float, F: float) -> sp.csr_matrix:
    """The discrete operator ``lap - F I`` acting on flattened interior fields."""
    return (laplacian_matrix(G, h) - F * sp.identity(G * G)).tocsr()


@lru_cache(maxsize=8)
def _helmholtz_factor(G: int, h: float, F: float):
    # F I - lap is SPD; symmetric ordering and no off-diagonal pivoting keep the factor Cholesky-like
    M = (-helmholtz_matrix(G, h, F)).tocsc()
    try:
        return spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                         options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"Helmholtz factorization failed: {exc}") from exc


def laplacian(field: np.ndarray, h: float) -> np.ndarray:
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (field.ndim - 2)
    p = np.pad(field, pad)
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * field) / (h * h)


def ddx(field: np.ndarray, h: float) -> np.ndarray:
    pad = [(0, 0), (1, 1)] + [(0, 0)] * (field.ndim - 2)
    p = np.pad(field, pad)
    return (p[:, 2:] - p[:, :-2]) / (2.0 * h)


def arakawa_jacobian(psi: np.ndarray, q: np.ndarray, h: float) -> np.ndarray:
    """Arakawa's energy- and enstrophy-conserving ``J(psi, q) = psi_x q_y - psi_y q_x``."""
    single = psi.ndim == 2
    a = np.ascontiguousarray(psi[..., None] if single else psi, dtype=float)
    b = np.ascontiguousarray(q[..., None] if single else q, dtype=float)
    out = kernels.arakawa_jacobian(a, b, float(h))
    return out[..., 0] if single else out


class QuasiGeostrophic(ModelSystem):
    def __init__(self, cfg: QGConfig | None = None, **kwargs):
        self.cfg = cfg or QGConfig(**kwargs)
        G = self.cfg.grid
        self.G = G
        self.h = self.cfg.h
        self.n = G * G
        self.dt = self.cfg.dt
        y = (np.arange(G) + 1) * self.h
        self.y = y
        self._forcing = 2.0 * np.pi * np.sin(2.0 * np.pi * y)
        self._lu = _helmholtz_factor(G, self.h, self.cfg.F)
        iy, ix = np.divmod(np.arange(self.n), G)
        self.coords = np.column_stack([ix, iy]).astype(float)

    # -- field-level operators -------------------------------------------------
    def helmholtz_solve(self, q: np.ndarray) -> np.ndarray:
        """Solve ``lap(psi) - F psi = q`` for ``psi`` (same shape as ``q``)."""
        q = np.asarray(q, dtype=float)
        rhs = -q.reshape(self.n, -1)
        psi = self._lu.solve(np.asfortranarray(rhs))
        return psi.reshape(q.shape)

    def vorticity(self, psi: np.ndarray) -> np.ndarray:
        return laplacian(psi, self.h) - self.cfg.F * psi

    def forcing_field(self, shape) -> np.ndarray:
        f = self._forcing[:, None]
        return np.broadcast_to(f if len(shape) == 2 else f[..., None], shape)

    def q_tendency(self, psi: np.ndarray, q: np.ndarray) -> np.ndarray:
        c = self.cfg
        h = self.h
        lap3 = laplacian(laplacian(laplacian(psi, h), h), h)
        return (-ddx(psi, h) - c.eps * arakawa_jacobian(psi, q, h) - c.A * lap3
                + self.forcing_field(psi.shape))

    # -- ModelSystem ------------------------------------------------------------
    def _fields(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"state has length {x.shape[0]}, expected {self.n}")
        return x.reshape((self.G, self.G) + x.shape[1:])

    def tendency(self, t, x):
        psi = self._fields(x)
        qt = self.q_tendency(psi, self.vorticity(psi))
        return self.helmholtz_solve(qt).reshape(np.shape(x))

    def distances(self, rows=None, cols=None):
        a = self.coords if rows is None else self.coords[np.asarray(rows)]
        b = self.coords if cols is None else self.coords[np.asarray(cols)]
        dx = a[:, None, 0] - b[None, :, 0]
        dy = a[:, None, 1] - b[None, :, 1]
        return np.sqrt(dx * dx + dy * dy)

    def random_state(self, rng: np.random.Generator, spin: float, amplitude: float = 10.0) -> np.ndarray:
        """Stream function after integrating a random vorticity field for ``spin`` time units."""
        q0 = amplitude * rng.standard_normal((self.G, self.G))
        psi0 = self.helmholtz_solve(q0).ravel()
        if spin <= 0:
            return psi0
        return propagate_states(self, psi0, 0.0, spin)

    def lattice_indices(self, stride: int, offset: int = 0) -> np.ndarray:
        """Flattened indices of a regular sub-lattice, used as observation sites."""
        ticks = np.arange(offset, self.G, stride)
        iy, ix = np.meshgrid(ticks, ticks, indexing="ij")
        return (iy * self.G + ix).ravel()


def qg_tendency(model: QuasiGeostrophic, t, q: np.ndarray) -> np.ndarray:
    """Potential-vorticity tendency for a ``(G, G)`` field (or stack)."""
    psi = model.helmholtz_solve(q)
    return model.q_tendency(psi, q)


def helmholtz_solve(model: QuasiGeostrophic, q: np.ndarray) -> np.ndarray:
    return model.helmholtz_solve(q)
