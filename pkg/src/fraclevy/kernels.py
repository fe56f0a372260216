"""Hot numeric loops, each in a pure-numpy and a numba flavour.

The public names (``ml_series``, ``scatter_forward``, ``causal_conv``,
``event_scatter``) are bound to one flavour according to
:mod:`fraclevy._backend`. Both flavours stay importable as ``*_numpy`` and
``*_numba`` so they can be compared directly.

Array conventions: ``kern`` is a lag table of shape ``(n_nodes, d)`` with
``kern[lag, k]`` the k-th diagonal entry of the solution operator at time
``lag * h``; increments and accumulators carry a leading path axis.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from fraclevy import _backend


def ml_series_numpy(alpha: float, z: np.ndarray, nterms: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    k = np.arange(nterms, dtype=float)
    lg = gammaln(alpha * k + 1.0)
    az = np.abs(z)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logmag = k * np.log(az) - lg
    terms = np.exp(logmag)
    terms[..., 0] = 1.0
    odd = (np.arange(nterms) % 2 == 1)
    neg = (z < 0)[..., None]
    terms = np.where(neg & odd, -terms, terms)
    return terms.sum(axis=-1)


def scatter_forward_numpy(acc: np.ndarray, kern: np.ndarray, inc: np.ndarray, i: int) -> None:
    n = acc.shape[1]
    if i + 1 >= n:
        return
    acc[:, i + 1:, :] += kern[1:n - i][None, :, :] * inc[:, None, :]


def causal_conv_numpy(kern: np.ndarray, inc: np.ndarray) -> np.ndarray:
    # out[p, j] = sum_{i<j} kern[j-i] * inc[p, i]
    n_paths, n, d = inc.shape
    out = np.zeros_like(inc)
    for lag in range(1, n):
        out[:, lag:, :] += kern[lag][None, None, :] * inc[:, :n - lag, :]
    return out


def event_scatter_numpy(acc: np.ndarray, paths: np.ndarray, starts: np.ndarray,
                        ekern: np.ndarray, vals: np.ndarray) -> None:
    for e in range(paths.shape[0]):
        s = starts[e]
        acc[paths[e], s:, :] += ekern[e, s:, :] * vals[e][None, :]


if _backend.numba is not None:
    from numba import njit, prange

    @njit(cache=True)
    def _ml_series_nb(alpha, z, nterms):
        lg = np.empty(nterms)
        for k in range(nterms):
            lg[k] = math.lgamma(alpha * k + 1.0)
        out = np.empty(z.shape[0])
        for n in range(z.shape[0]):
            zz = z[n]
            if zz == 0.0:
                out[n] = 1.0
                continue
            la = math.log(abs(zz))
            s = 1.0
            for k in range(1, nterms):
                t = math.exp(k * la - lg[k])
                if zz < 0.0 and k % 2 == 1:
                    s -= t
                else:
                    s += t
            out[n] = s
        return out

    def ml_series_numba(alpha: float, z: np.ndarray, nterms: int) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return _ml_series_nb(float(alpha), z.ravel(), int(nterms)).reshape(z.shape)

    @njit(cache=True, parallel=True)
    def scatter_forward_numba(acc, kern, inc, i):
        n = acc.shape[1]
        d = acc.shape[2]
        for p in prange(acc.shape[0]):
            for j in range(i + 1, n):
                for k in range(d):
                    acc[p, j, k] += kern[j - i, k] * inc[p, k]

    @njit(cache=True, parallel=True)
    def causal_conv_numba(kern, inc):
        n_paths, n, d = inc.shape
        out = np.zeros_like(inc)
        for p in prange(n_paths):
            for j in range(1, n):
                for i in range(j):
                    for k in range(d):
                        out[p, j, k] += kern[j - i, k] * inc[p, i, k]
        return out

    @njit(cache=True)
    def event_scatter_numba(acc, paths, starts, ekern, vals):
        n = acc.shape[1]
        d = acc.shape[2]
        for e in range(paths.shape[0]):
            p = paths[e]
            for j in range(starts[e], n):
                for k in range(d):
                    acc[p, j, k] += ekern[e, j, k] * vals[e, k]
else:  # pragma: no cover
    ml_series_numba = ml_series_numpy
    scatter_forward_numba = scatter_forward_numpy
    causal_conv_numba = causal_conv_numpy
    event_scatter_numba = event_scatter_numpy


if _backend.USE_NUMBA:
    ml_series = ml_series_numba
    scatter_forward = scatter_forward_numba
    causal_conv = causal_conv_numba
    event_scatter = event_scatter_numba
else:
    ml_series = ml_series_numpy
    scatter_forward = scatter_forward_numpy
    causal_conv = causal_conv_numpy
    event_scatter = event_scatter_numpy
