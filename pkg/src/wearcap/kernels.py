"""Hot inner loops.

Each kernel has a numba-compiled loop version and a vectorised numpy
version.  The public names dispatch on ``wearcap._jit.USE_NUMBA``; both
variants stay importable so tests and the benchmark can compare them.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

LN_EPS = 1e-5


def _lcs_length_py(a, b):
    n, m = len(a), len(b)
    prev = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        cur = np.zeros(m + 1, dtype=np.int64)
        ai = a[i]
        for j in range(m):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(cur[j], prev[j + 1])
        prev = cur
    return int(prev[m])


def lcs_length_numpy(a, b):
    """LCS length via anti-diagonal-free row sweep with a numpy inner step."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    m = len(b)
    prev = np.zeros(m + 1, dtype=np.int64)
    for ai in a:
        eq = b == ai
        diag = np.where(eq, prev[:-1] + 1, 0)
        # cur[j+1] = max(diag[j], cur[j], prev[j+1]); the cur[j] dependency
        # is a running maximum along the row
        base = np.maximum(diag, prev[1:])
        cur = np.empty(m + 1, dtype=np.int64)
        cur[0] = 0
        cur[1:] = np.maximum.accumulate(base) if m else base
        prev = cur
    return int(prev[m])


lcs_length_numba = njit(_lcs_length_py)


def _ln_forward_loop(x, gamma, beta, eps):
    n, d = x.shape
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            t = x[i, j] - mu
            var += t * t
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            out[i, j] = h * gamma[j] + beta[j]
    return out, xhat, rstd


def _ln_backward_loop(dout, xhat, rstd, gamma):
    n, d = dout.shape
    dx = np.empty_like(dout)
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            g = dout[i, j] * gamma[j]
            s1 += g
            s2 += g * xhat[i, j]
            dgamma[j] += dout[i, j] * xhat[i, j]
            dbeta[j] += dout[i, j]
        s1 /= d
        s2 /= d
        for j in range(d):
            g = dout[i, j] * gamma[j]
            dx[i, j] = rstd[i] * (g - s1 - xhat[i, j] * s2)
    return dx, dgamma, dbeta


ln_forward_numba = njit(_ln_forward_loop)
ln_backward_numba = njit(_ln_backward_loop)


def ln_forward_numpy(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd[:, None]
    return xhat * gamma + beta, xhat, rstd


def ln_backward_numpy(dout, xhat, rstd, gamma):
    g = dout * gamma
    s1 = g.mean(axis=1, keepdims=True)
    s2 = (g * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (g - s1 - xhat * s2)
    return dx, (dout * xhat).sum(axis=0), dout.sum(axis=0)


if USE_NUMBA:
    lcs_length = lcs_length_numba
    ln_forward = ln_forward_numba
    ln_backward = ln_backward_numba
else:
    lcs_length = lcs_length_numpy
    ln_forward = ln_forward_numpy
    ln_backward = ln_backward_numpy


def lcs(a, b):
    """Longest common subsequence length of two integer sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        return 0
    return int(lcs_length(a, b))
