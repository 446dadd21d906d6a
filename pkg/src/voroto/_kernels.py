"""Hot numeric kernels.

Every kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature.  The numba path is used when numba imports and the
``VOROTO_NUMBA`` environment variable is not set to ``0``; the flag is read
once at import time.
"""
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("VOROTO_NUMBA", "1") != "0"

_CHUNK = 4096


def density_numpy(px, py, sx, sy, beta, alpha, theta, k):
    """Clamped Voronoi density at points (px, py) for sites (sx, sy)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    out = np.empty(px.shape[0])
    c, s = np.cos(theta), np.sin(theta)
    for start in range(0, px.shape[0], _CHUNK):
        stop = start + _CHUNK
        X = px[start:stop, None] - sx[None, :]
        Y = py[start:stop, None] - sy[None, :]
        dx = c * X - s * Y
        dy = s * X + c * Y
        d = np.sqrt(alpha * dx * dx + dy * dy / alpha)
        # shift by the nearest site so the largest exponent is exactly 0
        e = np.exp(-k * (d - d.min(axis=1, keepdims=True)))
        w = e / e.sum(axis=1, keepdims=True)
        rho = 1.0 - (w**beta).sum(axis=1)
        out[start:stop] = np.clip(rho, 0.0, 1.0)
    return out


def energy_numpy(w, U, KE):
    """Sum_e w_e U_e^T KE U_e for element vectors U of shape (ne, 8, m)."""
    KU = np.einsum("ij,ejb->eib", KE, U)
    return np.einsum("e,eia,eib->ab", w, U, KU)


if HAVE_NUMBA:

    @njit(cache=True)
    def density_numba(px, py, sx, sy, beta, alpha, theta, k):
        n = px.shape[0]
        m = sx.shape[0]
        out = np.empty(n)
        c = np.cos(theta)
        s = np.sin(theta)
        d = np.empty(m)
        for p in range(n):
            dmin = np.inf
            for q in range(m):
                X = px[p] - sx[q]
                Y = py[p] - sy[q]
                dx = c * X - s * Y
                dy = s * X + c * Y
                d[q] = np.sqrt(alpha * dx * dx + dy * dy / alpha)
                if d[q] < dmin:
                    dmin = d[q]
            total = 0.0
            for q in range(m):
                d[q] = np.exp(-k * (d[q] - dmin))
                total += d[q]
            acc = 0.0
            for q in range(m):
                acc += (d[q] / total) ** beta
            rho = 1.0 - acc
            if rho < 0.0:
                rho = 0.0
            elif rho > 1.0:
                rho = 1.0
            out[p] = rho
        return out

    @njit(cache=True)
    def energy_numba(w, U, KE):
        ne, nd, m = U.shape
        out = np.zeros((m, m))
        ku = np.empty(nd)
        for e in range(ne):
            for b in range(m):
                for i in range(nd):
                    acc = 0.0
                    for j in range(nd):
                        acc += KE[i, j] * U[e, j, b]
                    ku[i] = acc
                for a in range(m):
                    acc = 0.0
                    for i in range(nd):
                        acc += U[e, i, a] * ku[i]
                    out[a, b] += w[e] * acc
        return out

else:  # pragma: no cover
    density_numba = density_numpy
    energy_numba = energy_numpy


def density(px, py, sx, sy, beta, alpha, theta, k):
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    sx = np.ascontiguousarray(sx, dtype=np.float64)
    sy = np.ascontiguousarray(sy, dtype=np.float64)
    fn = density_numba if USE_NUMBA else density_numpy
    return fn(px, py, sx, sy, float(beta), float(alpha), float(theta), float(k))


def energy(w, U, KE):
    w = np.ascontiguousarray(w, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    KE = np.ascontiguousarray(KE, dtype=np.float64)
    fn = energy_numba if USE_NUMBA else energy_numpy
    return fn(w, U, KE)
