"""Hot inner loops, compiled with numba when enabled.

Each kernel has a numpy twin with the same signature; ``USE_NUMBA`` picks
the implementation at import time.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit


@njit
def _mixture_posterior_mean_nb(x, logc, a, u, g, b):
    n, d = x.shape
    k_count = logc.shape[0]
    out = np.zeros((n, d))
    logw = np.empty(k_count)
    z = np.empty(d)
    for i in range(n):
        best = -np.inf
        for k in range(k_count):
            q = 0.0
            for r in range(d):
                s = 0.0
                for c in range(r + 1):
                    s += u[k, r, c] * (x[i, c] - a[k, c])
                q += s * s
            logw[k] = logc[k] - 0.5 * q
            if logw[k] > best:
                best = logw[k]
        total = 0.0
        for k in range(k_count):
            logw[k] = math.exp(logw[k] - best)
            total += logw[k]
        for k in range(k_count):
            w = logw[k] / total
            for r in range(d):
                s = b[k, r]
                for c in range(d):
                    s += g[k, r, c] * x[i, c]
                z[r] = s
            for r in range(d):
                out[i, r] += w * z[r]
    return out


def _mixture_posterior_mean_np(x, logc, a, u, g, b):
    k_count = logc.shape[0]
    logw = np.empty((x.shape[0], k_count))
    means = np.empty((k_count,) + x.shape)
    for k in range(k_count):
        z = (x - a[k]) @ u[k].T
        logw[:, k] = logc[k] - 0.5 * np.einsum("ij,ij->i", z, z)
        means[k] = x @ g[k].T + b[k]
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("ik,kid->id", w, means)


def mixture_posterior_mean(x, logc, a, u, g, b):
    """Responsibility-weighted affine predictor.

    For each row ``x_i`` returns ``sum_k r_k(x_i) (b_k + G_k x_i)`` with
    ``r_k ∝ exp(logc_k - ||U_k (x_i - a_k)||^2 / 2)``. ``U_k`` must be lower
    triangular (the inverse Cholesky factor of the component covariance).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return _mixture_posterior_mean_nb(x, logc, a, u, g, b)
    return _mixture_posterior_mean_np(x, logc, a, u, g, b)


@njit
def _em_step_nb(x, drift, noise, h, scale):
    n, d = x.shape
    bad = -1
    for i in range(n):
        for r in range(d):
            v = x[i, r] + drift[i, r] * h + scale * noise[i, r]
            x[i, r] = v
            if bad < 0 and not math.isfinite(v):
                bad = i
    return bad


def _em_step_np(x, drift, noise, h, scale):
    x += drift * h + scale * noise
    finite = np.isfinite(x).all(axis=1)
    if finite.all():
        return -1
    return int(np.argmin(finite))


def em_step(x, drift, noise, h):
    """In-place ``x += drift h + sqrt(2h) noise``; index of first non-finite row or -1."""
    scale = math.sqrt(2.0 * h)
    if USE_NUMBA:
        return int(_em_step_nb(x, np.ascontiguousarray(drift), noise, h, scale))
    return _em_step_np(x, drift, noise, h, scale)
