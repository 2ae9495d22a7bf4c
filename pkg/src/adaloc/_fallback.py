"""Pure numpy implementations of the compiled kernels (same signatures)."""

import numpy as np
import scipy.linalg as sla

K_MIN, K_MAX, K_MEAN, K_SQRT, K_RMS, K_HARM = range(6)


def combine_array(kind, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    if kind == K_MIN:
        return lo
    if kind == K_MAX:
        return hi
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == K_MEAN:
            m = 0.5 * (lo + hi)
        elif kind == K_SQRT:
            m = np.sqrt(lo) * np.sqrt(hi)
        elif kind == K_RMS:
            t = lo / hi
            m = hi * np.sqrt(0.5 * (1.0 + t * t))
        else:
            m = lo * (2.0 * hi / (lo + hi))
    m = np.clip(m, lo, hi)
    return np.where(a == b, a, m)


def rho_block(dist, r_rows, r_cols, kind):
    dist = np.asarray(dist, dtype=float)
    u = dist * (1.0 / np.asarray(r_rows, dtype=float))[:, None]
    a = np.exp(-0.5 * u * u)
    u = dist * (1.0 / np.asarray(r_cols, dtype=float))[None, :]
    b = np.exp(-0.5 * u * u)
    return combine_array(kind, a, b)


def _l96_tend(x, t, base, amp, omega, q):
    n = x.shape[0]
    if amp != 0.0:
        phase = (np.arange(n) % q) / q
        F = (base + amp * np.cos(omega * (t + phase)))[:, None]
    else:
        F = base
    return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + F


def l96_advance(x0, t0, dt, nsteps, base, amp, omega, q):
    x = np.array(x0, dtype=float, copy=True)
    h2 = 0.5 * dt
    h6 = dt / 6.0
    for s in range(nsteps):
        t = t0 + s * dt
        k1 = _l96_tend(x, t, base, amp, omega, q)
        k2 = _l96_tend(x + h2 * k1, t + h2, base, amp, omega, q)
        k3 = _l96_tend(x + h2 * k2, t + h2, base, amp, omega, q)
        k4 = _l96_tend(x + dt * k3, t + dt, base, amp, omega, q)
        x = x + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def arakawa_jacobian(psi, q, h):
    p = np.pad(psi, ((1, 1), (1, 1), (0, 0)))
    z = np.pad(q, ((1, 1), (1, 1), (0, 0)))
    c = slice(1, -1)
    pE, pW, pN, pS = p[c, 2:], p[c, :-2], p[2:, c], p[:-2, c]
    pNE, pNW, pSE, pSW = p[2:, 2:], p[2:, :-2], p[:-2, 2:], p[:-2, :-2]
    zE, zW, zN, zS = z[c, 2:], z[c, :-2], z[2:, c], z[:-2, c]
    zNE, zNW, zSE, zSW = z[2:, 2:], z[2:, :-2], z[:-2, 2:], z[:-2, :-2]
    j1 = (pE - pW) * (zN - zS) - (pN - pS) * (zE - zW)
    j2 = pE * (zNE - zSE) - pW * (zNW - zSW) - pN * (zNE - zNW) + pS * (zSE - zSW)
    j3 = zN * (pNE - pNW) - zS * (pSE - pSW) - zE * (pNE - pSE) + zW * (pNW - pSW)
    return (j1 + j2 + j3) * (1.0 / (12.0 * h * h))


def analysis_rmse_batch(xf, cxo, coo, d, rvar, dxo, doo, obs, radii, kind, truth):
    radii = np.atleast_2d(radii)
    out = np.empty(radii.shape[0])
    for c, r in enumerate(radii):
        ro = r[obs]
        S = rho_block(doo, ro, ro, kind) * coo
        S[np.diag_indices_from(S)] += rvar
        try:
            fac = sla.cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            out[c] = np.nan
            continue
        w = sla.cho_solve(fac, d, check_finite=False)
        xa = xf + (rho_block(dxo, r, ro, kind) * cxo) @ w
        out[c] = np.sqrt(np.mean((xa - truth) ** 2))
    return out
