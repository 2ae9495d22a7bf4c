# cython: language_level=3
"""Compiled hot loops.

Every function here has a numpy twin with the same signature in
``adaloc._fallback``; ``adaloc._backend`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, cos, NAN
from scipy.linalg.cython_lapack cimport dpotrf, dpotrs

cnp.import_array()

# mean-function codes, shared with the fallback
cdef enum:
    K_MIN = 0
    K_MAX = 1
    K_MEAN = 2
    K_SQRT = 3
    K_RMS = 4
    K_HARM = 5


cdef inline double _combine(int kind, double a, double b) noexcept nogil:
    cdef double lo, hi, m
    if a == b:
        return a
    if a < b:
        lo = a
        hi = b
    else:
        lo = b
        hi = a
    if kind == K_MIN:
        return lo
    elif kind == K_MAX:
        return hi
    elif kind == K_MEAN:
        m = 0.5 * (lo + hi)
    elif kind == K_SQRT:
        m = sqrt(lo) * sqrt(hi)
    elif kind == K_RMS:
        m = lo / hi
        m = hi * sqrt(0.5 * (1.0 + m * m))
    else:
        m = lo * (2.0 * hi / (lo + hi))
    if m < lo:
        return lo
    if m > hi:
        return hi
    return m


def combine_array(int kind, const double[::1] a, const double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _combine(kind, a[i], b[i])
    return out


def rho_block(const double[:, ::1] dist, const double[::1] r_rows, const double[::1] r_cols, int kind):
    """Gaussian taper block ``m(l(d_ik / r_i), l(d_ik / r_k))``."""
    cdef Py_ssize_t i, k, n = dist.shape[0], m = dist.shape[1]
    cdef double u, a, b, ir
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef double[::1] icol = 1.0 / np.asarray(r_cols)
    with nogil:
        for i in range(n):
            ir = 1.0 / r_rows[i]
            for k in range(m):
                u = dist[i, k] * ir
                a = exp(-0.5 * u * u)
                u = dist[i, k] * icol[k]
                b = exp(-0.5 * u * u)
                o[i, k] = _combine(kind, a, b)
    return out


cdef inline void _l96_tend(const double[:, ::1] x, double[:, ::1] out, double t,
                           double base, double amp, double omega, int q) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], N = x.shape[1], i, e, ip1, im1, im2
    cdef double F
    for i in range(n):
        ip1 = i + 1 if i + 1 < n else 0
        im1 = i - 1 if i >= 1 else n - 1
        im2 = i - 2 if i >= 2 else i - 2 + n
        if amp != 0.0:
            F = base + amp * cos(omega * (t + <double>(i % q) / q))
        else:
            F = base
        for e in range(N):
            out[i, e] = (x[ip1, e] - x[im2, e]) * x[im1, e] - x[i, e] + F


def l96_advance(const double[:, ::1] x0, double t0, double dt, int nsteps,
                double base, double amp, double omega, int q):
    """``nsteps`` RK4 steps of (forced) Lorenz'96 for a column-stacked ensemble."""
    cdef Py_ssize_t n = x0.shape[0], N = x0.shape[1], i, e, s
    x_arr = np.array(x0, copy=True)
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] k1 = np.empty((n, N)), k2 = np.empty((n, N))
    cdef double[:, ::1] k3 = np.empty((n, N)), k4 = np.empty((n, N))
    cdef double[:, ::1] tmp = np.empty((n, N))
    cdef double t, h2 = 0.5 * dt, h6 = dt / 6.0
    with nogil:
        for s in range(nsteps):
            t = t0 + s * dt
            _l96_tend(x, k1, t, base, amp, omega, q)
            for i in range(n):
                for e in range(N):
                    tmp[i, e] = x[i, e] + h2 * k1[i, e]
            _l96_tend(tmp, k2, t + h2, base, amp, omega, q)
            for i in range(n):
                for e in range(N):
                    tmp[i, e] = x[i, e] + h2 * k2[i, e]
            _l96_tend(tmp, k3, t + h2, base, amp, omega, q)
            for i in range(n):
                for e in range(N):
                    tmp[i, e] = x[i, e] + dt * k3[i, e]
            _l96_tend(tmp, k4, t + dt, base, amp, omega, q)
            for i in range(n):
                for e in range(N):
                    x[i, e] = x[i, e] + h6 * (k1[i, e] + 2.0 * k2[i, e] + 2.0 * k3[i, e] + k4[i, e])
    return x_arr


cdef inline double _at(const double[:, :, ::1] f, Py_ssize_t i, Py_ssize_t j, Py_ssize_t e,
                       Py_ssize_t G) noexcept nogil:
    if i < 0 or j < 0 or i >= G or j >= G:
        return 0.0
    return f[i, j, e]


def arakawa_jacobian(const double[:, :, ::1] psi, const double[:, :, ::1] q, double h):
    """Nine-point Arakawa Jacobian ``J(psi, q)`` on a (G, G, N) stack, zero outside the grid.

    Axis 0 is y (rows), axis 1 is x (columns).
    """
    cdef Py_ssize_t G = psi.shape[0], N = psi.shape[2], i, j, e
    cdef double pE, pW, pN, pS, pNE, pNW, pSE, pSW
    cdef double zE, zW, zN, zS, zNE, zNW, zSE, zSW, j1, j2, j3
    cdef double scale = 1.0 / (12.0 * h * h)
    out = np.empty((G, G, N))
    cdef double[:, :, ::1] o = out
    with nogil:
        for i in range(G):
            for j in range(G):
                for e in range(N):
                    pE = _at(psi, i, j + 1, e, G)
                    pW = _at(psi, i, j - 1, e, G)
                    pN = _at(psi, i + 1, j, e, G)
                    pS = _at(psi, i - 1, j, e, G)
                    pNE = _at(psi, i + 1, j + 1, e, G)
                    pNW = _at(psi, i + 1, j - 1, e, G)
                    pSE = _at(psi, i - 1, j + 1, e, G)
                    pSW = _at(psi, i - 1, j - 1, e, G)
                    zE = _at(q, i, j + 1, e, G)
                    zW = _at(q, i, j - 1, e, G)
                    zN = _at(q, i + 1, j, e, G)
                    zS = _at(q, i - 1, j, e, G)
                    zNE = _at(q, i + 1, j + 1, e, G)
                    zNW = _at(q, i + 1, j - 1, e, G)
                    zSE = _at(q, i - 1, j + 1, e, G)
                    zSW = _at(q, i - 1, j - 1, e, G)
                    j1 = (pE - pW) * (zN - zS) - (pN - pS) * (zE - zW)
                    j2 = (pE * (zNE - zSE) - pW * (zNW - zSW)
                          - pN * (zNE - zNW) + pS * (zSE - zSW))
                    j3 = (zN * (pNE - pNW) - zS * (pSE - pSW)
                          - zE * (pNE - pSE) + zW * (pNW - pSW))
                    o[i, j, e] = (j1 + j2 + j3) * scale
    return out


def analysis_rmse_batch(const double[::1] xf, const double[:, ::1] cxo, const double[:, ::1] coo,
                        const double[::1] d, const double[::1] rvar, const double[:, ::1] dxo,
                        const double[:, ::1] doo, const cnp.int64_t[::1] obs,
                        const double[:, ::1] radii, int kind, const double[::1] truth):
    """Analysis-mean RMSE against ``truth`` for each row of ``radii``.

    ``cxo`` and ``coo`` are the unlocalized ``P H^T`` and ``H P H^T``;
    candidates whose innovation covariance is not SPD get NaN.
    """
    cdef Py_ssize_t n = cxo.shape[0], m = cxo.shape[1], K = radii.shape[0]
    cdef Py_ssize_t c, i, k, l
    cdef double u, a, b, acc, err, ri
    cdef int info = 0, one = 1, mm = <int>m
    cdef char uplo = b'L'
    out = np.empty(K)
    cdef double[::1] o = out
    cdef double[::1, :] S = np.empty((m, m), order="F")
    cdef double[::1] w = np.empty(m)
    cdef double[::1] iro = np.empty(m)
    cdef double[::1] irx = np.empty(n)
    with nogil:
        for c in range(K):
            for i in range(n):
                irx[i] = 1.0 / radii[c, i]
            for k in range(m):
                iro[k] = irx[obs[k]]
            for l in range(m):
                for k in range(l, m):
                    u = doo[k, l] * iro[k]
                    a = exp(-0.5 * u * u)
                    u = doo[k, l] * iro[l]
                    b = exp(-0.5 * u * u)
                    S[k, l] = _combine(kind, a, b) * coo[k, l]
                S[l, l] += rvar[l]
                w[l] = d[l]
            dpotrf(&uplo, &mm, &S[0, 0], &mm, &info)
            if info != 0:
                o[c] = NAN
                continue
            dpotrs(&uplo, &mm, &one, &S[0, 0], &mm, &w[0], &mm, &info)
            err = 0.0
            for i in range(n):
                ri = irx[i]
                acc = 0.0
                for k in range(m):
                    u = dxo[i, k] * ri
                    a = exp(-0.5 * u * u)
                    u = dxo[i, k] * iro[k]
                    b = exp(-0.5 * u * u)
                    acc = acc + _combine(kind, a, b) * cxo[i, k] * w[k]
                u = xf[i] + acc - truth[i]
                err = err + u * u
            o[c] = sqrt(err / n)
    return out
