"""Scalar Mittag-Leffler evaluation and the constants built from it.

Two evaluation routes are provided for real arguments:

* :func:`ml` -- scalar and careful. Power series for ``|z|`` up to the cutoff,
  otherwise the Bromwich integral folded onto the negative real axis: a pole
  residue (present for ``1 < order <= 2``) plus a real Laplace-type integral
  done with adaptive quadrature.
* :func:`ml_array` -- vectorised and fast. Same series, but the folded
  integral is read from a per-order piecewise Chebyshev table (built once from
  the scalar route) and replaced by its algebraic asymptotic expansion for
  very large ``|z|``.

``ml`` is the reference; ``ml_array`` is what the path simulator uses.
"""
from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev
from scipy import integrate
from scipy.special import rgamma

from fraclevy import kernels


class MLEvaluationError(ArithmeticError):
    """Series evaluation did not reach the requested tolerance."""

    def __init__(self, message: str, partial: float, terms: int):
        super().__init__(message)
        self.partial = partial
        self.terms = terms


class InternalConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class FractionalOrder:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (1.0 < a < 2.0):
            raise ValueError(f"alpha must lie in (1,2), got {a}")
        object.__setattr__(self, "alpha", a)

    def __float__(self) -> float:
        return self.alpha


def as_alpha(alpha: FractionalOrder | float) -> float:
    """Validated float value of a fractional order in (1, 2)."""
    if isinstance(alpha, FractionalOrder):
        return alpha.alpha
    return FractionalOrder(alpha).alpha


@dataclass(frozen=True)
class MLEvalConfig:
    series_cutoff_radius: float = 5.0
    max_terms: int = 400
    target_abs_tol: float = 1e-10

    def __post_init__(self):
        if self.series_cutoff_radius < 0:
            raise ValueError("series_cutoff_radius must be nonnegative")
        if int(self.max_terms) != self.max_terms or self.max_terms < 20:
            raise ValueError("max_terms must be an integer >= 20")
        if not self.target_abs_tol > 0:
            raise ValueError("target_abs_tol must be positive")


DEFAULT_CONFIG = MLEvalConfig()


def _check_order(order: float) -> float:
    order = float(order)
    if not (0.0 < order <= 2.0):
        raise ValueError(f"order must lie in (0,2], got {order}")
    return order


def _series_cutoff(order: float, cfg: MLEvalConfig) -> float:
    # below order 1 the alternating series cancels badly already at |z| ~ 5
    return cfg.series_cutoff_radius if order >= 1.0 else min(cfg.series_cutoff_radius, 1.0)


def _series(order: float, z: float, cfg: MLEvalConfig, beta: float = 1.0) -> float:
    if z == 0.0:
        return 1.0 / math.gamma(beta)
    la = math.log(abs(z))
    s = 1.0 / math.gamma(beta)
    prev = math.inf
    stop = 1e-6 * cfg.target_abs_tol
    for k in range(1, int(cfg.max_terms)):
        t = math.exp(k * la - math.lgamma(order * k + beta))
        s += -t if (z < 0 and k % 2) else t
        if t <= prev and (t <= stop or t <= 1e-17 * abs(s)):
            return s
        prev = t
    raise MLEvaluationError(
        f"series for E_{order}({z}) did not converge in {cfg.max_terms} terms",
        partial=s, terms=int(cfg.max_terms))


def _pole_part(order: float, t):
    """Residue contribution of the two conjugate poles (zero for order <= 1)."""
    if order <= 1.0:
        return np.zeros_like(np.asarray(t, dtype=float))
    c, s = math.cos(math.pi / order), math.sin(math.pi / order)
    return (2.0 / order) * np.exp(t * c) * np.cos(t * s)


def _folded_integral(order: float, t: float) -> float:
    """int_0^inf exp(-r t) K(r) dr, the branch-cut part of E_order(-t**order)."""
    sa, ca = math.sin(order * math.pi), math.cos(order * math.pi)

    def integrand(r):
        ra = r ** order
        return math.exp(-r * t) * (r ** (order - 1.0) * sa / math.pi) / (ra * ra + 2.0 * ra * ca + 1.0)

    # exp(-r t) concentrates the mass in r < ~40/t for large t
    pts = [0.0, 1.0] + [k / t for k in (1.0, 8.0, 40.0) if k / t < 1.0]
    if ca < 0:
        # the kernel peaks near r**order = -cos(order*pi), sharply as order -> integer
        rp = (-ca) ** (1.0 / order)
        w = abs(sa) / order
        pts += [rp, max(rp - 5 * w, rp / 2), rp + 5 * w]
    pts = sorted(set(pts))
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=1e-16, epsrel=1e-13, limit=400)[0]
    total += integrate.quad(integrand, pts[-1], np.inf, epsabs=1e-16, epsrel=1e-13, limit=400)[0]
    return total


def _large_negative(order: float, x: float) -> float:
    if order == 1.0:
        return math.exp(-x)
    if order == 2.0:
        return math.cos(math.sqrt(x))
    t = x ** (1.0 / order)
    return float(_pole_part(order, t)) + _folded_integral(order, t)


def ml(order: float, z: float, cfg: MLEvalConfig = DEFAULT_CONFIG) -> float:
    """E_order(z) = sum_k z**k / Gamma(order*k + 1) for real ``z``."""
    order = _check_order(order)
    z = float(z)
    if z >= 0.0 or -z <= _series_cutoff(order, cfg):
        return _series(order, z, cfg)
    return _large_negative(order, -z)


# --- fast vectorised route -------------------------------------------------

_ASYMPTOTIC_X = 1e4
_CHEB_DEG = 24
_ASYMPTOTIC_TERMS = 12


class _NegativeAxisTable:
    """Piecewise Chebyshev table of the folded integral on [x_lo, x_hi] in log t."""

    def __init__(self, order: float, x_lo: float):
        self.order = order
        self.t_lo = x_lo ** (1.0 / order)
        self.t_hi = _ASYMPTOTIC_X ** (1.0 / order)
        u0, u1 = math.log(self.t_lo), math.log(self.t_hi)
        self.n_panels = max(1, math.ceil((u1 - u0) / math.log(2.0)))
        self.u0 = u0
        self.du = (u1 - u0) / self.n_panels
        coeffs = []
        for p in range(self.n_panels):
            a = u0 + p * self.du

            def f(xs, a=a):
                return np.array([_folded_integral(order, math.exp(a + 0.5 * (x + 1.0) * self.du)) for x in xs])

            coeffs.append(chebyshev.chebinterpolate(f, _CHEB_DEG))
        self.coeffs = np.array(coeffs)
        k = np.arange(1, _ASYMPTOTIC_TERMS + 1)
        self._asym_k = k
        self._asym_c = rgamma(1.0 - order * k)

    def folded(self, t: np.ndarray) -> np.ndarray:
        u = np.log(t)
        pos = (u - self.u0) / self.du
        idx = np.clip(np.floor(pos).astype(int), 0, self.n_panels - 1)
        x = 2.0 * (pos - idx) - 1.0
        c = self.coeffs[idx]
        b1 = np.zeros_like(x)
        b2 = np.zeros_like(x)
        for k in range(_CHEB_DEG, 0, -1):
            b1, b2 = 2.0 * x * b1 - b2 + c[:, k], b1
        return x * b1 - b2 + c[:, 0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        t = x ** (1.0 / self.order)
        out = np.empty_like(x)
        near = x <= _ASYMPTOTIC_X
        if near.any():
            out[near] = self.folded(t[near])
        far = ~near
        if far.any():
            xf = x[far][:, None]
            out[far] = -np.sum((-xf) ** (-self._asym_k) * self._asym_c, axis=1)
        return out + _pole_part(self.order, t)


@functools.lru_cache(maxsize=32)
def _table(order: float, x_lo: float) -> _NegativeAxisTable:
    return _NegativeAxisTable(order, x_lo)


@functools.lru_cache(maxsize=64)
def _series_terms(order: float, radius: float) -> int:
    # enough terms that radius**k / Gamma(order*k+1) < 1e-18 past the peak
    k = 1
    while True:
        logt = k * math.log(max(radius, 1e-300)) - math.lgamma(order * k + 1.0)
        if k > radius and logt < math.log(1e-18):
            return k + 1
        k += 1


def ml_array(order: float, z, cfg: MLEvalConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Vectorised E_order(z) over an array of real arguments."""
    order = _check_order(order)
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    out = np.empty_like(flat)
    cut = _series_cutoff(order, cfg)
    small = (flat <= 0.0) & (flat >= -cut)
    if small.any():
        out[small] = kernels.ml_series(order, flat[small], _series_terms(order, cut))
    pos = flat > 0.0
    for n in np.flatnonzero(pos):
        out[n] = _series(order, float(flat[n]), cfg)
    big = flat < -cut
    if big.any():
        x = -flat[big]
        if order == 1.0:
            out[big] = np.exp(-x)
        elif order == 2.0:
            out[big] = np.cos(np.sqrt(x))
        else:
            out[big] = _table(order, cut)(x)
    return out.reshape(z.shape)


# --- solution operator and bounds -------------------------------------------

def scalar_solution_operator(alpha: FractionalOrder | float, mu_k: float, t: float,
                             cfg: MLEvalConfig = DEFAULT_CONFIG) -> float:
    """Action of S_alpha(t) on an eigenvector with eigenvalue ``mu_k``."""
    a = as_alpha(alpha)
    if not mu_k < 0:
        raise ValueError("mu_k must be negative")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 1.0
    return ml(a, mu_k * t ** a, cfg)


def decay_bound(C: float, M: float, mu: float, alpha: FractionalOrder | float, t):
    """C*M / (1 + |mu| t**alpha)."""
    a = float(alpha)
    return C * M / (1.0 + abs(mu) * np.asarray(t, dtype=float) ** a)


def squared_exponent_middle_constant(alpha: FractionalOrder | float, mu: float) -> float:
    """|mu|**(-2/alpha) * pi / (2 alpha sin(pi / (2 alpha))), the squared-exponent variant."""
    a = float(alpha)
    return abs(mu) ** (-2.0 / a) * math.pi / (2.0 * a * math.sin(math.pi / (2.0 * a)))


def convolution_constants_quad(alpha: FractionalOrder | float, mu: float) -> tuple[float, float]:
    """Adaptive-quadrature values of the two kernel integrals."""
    a = float(alpha)
    c = abs(mu)
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    q1 = sum(integrate.quad(lambda s: 1.0 / (1.0 + c * s ** a), lo, hi, **opts)[0]
             for lo, hi in ((0.0, 1.0), (1.0, np.inf)))
    q2 = sum(integrate.quad(lambda s: 1.0 / (1.0 + c * c * s ** (2 * a)), lo, hi, **opts)[0]
             for lo, hi in ((0.0, 1.0), (1.0, np.inf)))
    return q1, q2


def convolution_constants(alpha: FractionalOrder | float, mu: float,
                          verify: bool | None = None) -> tuple[float, float]:
    """Closed forms of int_0^inf ds/(1+|mu|s^a) and int_0^inf ds/(1+|mu|^2 s^(2a)).

    With ``verify`` (default: the ``FRACLEVY_DEBUG`` environment flag) both are
    re-derived by quadrature and must agree to 1e-6 relative.
    """
    a = float(alpha)
    if not mu < 0:
        raise ValueError("mu must be negative")
    if not a > 1.0:
        raise ValueError("alpha must exceed 1 for the integrals to converge")
    scale = abs(mu) ** (-1.0 / a)
    c1 = scale * math.pi / (a * math.sin(math.pi / a))
    c2 = scale * math.pi / (2.0 * a * math.sin(math.pi / (2.0 * a)))
    if verify is None:
        verify = bool(os.environ.get("FRACLEVY_DEBUG"))
    if verify:
        q1, q2 = convolution_constants_quad(a, mu)
        for name, closed, quad in (("C1", c1, q1), ("C2", c2, q2)):
            if abs(closed - quad) > 1e-6 * abs(closed):
                raise InternalConsistencyError(
                    f"{name} closed form {closed!r} disagrees with quadrature {quad!r}")
    return c1, c2


def _ml_two_param(alpha: float, beta: float, z: float, dps: int = 50) -> float:
    """E_{alpha,beta}(z) by an extended-precision series; test oracle only."""
    import mpmath

    with mpmath.workdps(dps):
        a, b, zz = mpmath.mpf(alpha), mpmath.mpf(beta), mpmath.mpf(z)
        s = mpmath.mpf(0)
        tol = mpmath.mpf(10) ** (-dps + 5)
        k = 0
        while True:
            t = zz ** k / mpmath.gamma(a * k + b)
            s += t
            if k > abs(zz) and abs(t) < tol:
                break
            k += 1
        return float(s)
