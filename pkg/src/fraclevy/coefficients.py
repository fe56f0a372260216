"""Nonlinearities f, g, F, G and their Lipschitz / periodicity diagnostics.

All four maps act on stacked states with a leading batch axis:

* ``f(t, x_floor, x)`` -> ``(n, d)``, ``x_floor`` being the state at ``floor(t)``
* ``g(t, x_floor, x)`` -> ``(n, d, dim_U)``
* ``F(t, x, u)`` / ``G(t, x, u)`` -> ``(n, d)``, with ``u`` either one mark
  ``(dim_U,)`` or one mark per row ``(n, dim_U)``
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from fraclevy.levy_noise import LevyMeasureSpec, QWienerSpec, integrate_against_nu


@dataclass(frozen=True)
class PeriodicPlusDecay:
    omega: float
    amplitude: float
    decay_rate: float
    periodic_weight: float = 1.0

    def periodic_part(self, t):
        # reduce mod omega first so shifts by omega give bit-identical values on dyadic grids
        r = np.mod(np.asarray(t, dtype=float), self.omega)
        return self.periodic_weight * np.sin(2.0 * np.pi * r / self.omega)

    def decay_part(self, t):
        return np.exp(-self.decay_rate * np.asarray(t, dtype=float))

    def __call__(self, t):
        return self.amplitude * (self.periodic_part(t) + self.decay_part(t))

    def defect(self, t):
        """|phi(t + omega) - phi(t)| in closed form."""
        return abs(self.amplitude) * self.decay_part(t) * (1.0 - math.exp(-self.decay_rate * self.omega))


def build_periodic_plus_decay(omega: int, amplitude: float, decay_rate: float) -> PeriodicPlusDecay:
    if not decay_rate > 0:
        raise ValueError("decay_rate must be positive")
    return PeriodicPlusDecay(omega, amplitude, decay_rate)


@dataclass(frozen=True)
class CoefficientSet:
    f: Callable
    g: Callable
    F: Callable
    G: Callable
    lipschitz_L: float
    omega: int
    dim: int
    dim_U: int
    name: str = "custom"

    def __post_init__(self):
        if isinstance(self.omega, bool) or not float(self.omega).is_integer() or self.omega < 1:
            raise ValueError("omega must be a positive integer")
        object.__setattr__(self, "omega", int(self.omega))
        if not self.lipschitz_L >= 0:
            raise ValueError("lipschitz_L must be nonnegative")


# --- built-in families -------------------------------------------------------

def _ident(x):
    return x


def _saturate(x):
    return x / (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))


def _linear_family(dim, dim_U, L, omega, *, qspec, levy, shape=_ident, forcing=None,
                   envelope=None, sigma=0.0, feedback=True, name="linear"):
    """Coefficients whose state dependence has Lipschitz constant exactly L.

    f = a (s(x_floor) + s(x)) + forcing(t) 1, with a = sqrt(L/2)
    g e_k = env(t) beta_k (a (s(x_floor) + s(x)) + sigma 1), sum_k q_k beta_k^2 = 1
    F = env(t) |u| (c_F s(x) + sigma 1),  c_F^2 int_small |u|^2 nu = L
    G = env(t) (c_G s(x) + sigma 1),      c_G^2 b = L
    """
    a = math.sqrt(L / 2.0) if feedback else 0.0
    trq = qspec.trace if qspec is not None else 0.0
    beta = np.full(dim_U, 1.0 / math.sqrt(trq)) if trq > 0 else np.zeros(dim_U)
    m2s = levy.small_second_moment() if levy is not None else 0.0
    b = levy.b if levy is not None else 0.0
    c_F = math.sqrt(L / m2s) if (feedback and m2s > 0) else 0.0
    c_G = math.sqrt(L / b) if (feedback and b > 0) else 0.0
    ones = np.ones(dim)

    def env_of(t):
        return 1.0 if envelope is None else float(envelope(t))

    def f(t, xf, x):
        out = a * (shape(xf) + shape(x))
        if forcing is not None:
            out = out + float(forcing(t)) * ones
        return out

    def g(t, xf, x):
        col = a * (shape(xf) + shape(x)) + sigma * ones
        return env_of(t) * col[..., :, None] * beta

    def F(t, x, u):
        r = np.linalg.norm(np.asarray(u, dtype=float), axis=-1)
        r = np.asarray(r)[..., None] if np.ndim(r) else r
        return env_of(t) * r * (c_F * shape(x) + sigma * ones)

    def G(t, x, u):
        return env_of(t) * (c_G * shape(x) + sigma * ones) + 0.0 * np.asarray(x)

    return CoefficientSet(f, g, F, G, L if feedback else 0.0, omega, dim, dim_U, name)


def _zero_family(dim, dim_U, L, omega, **_):
    def f(t, xf, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g(t, xf, x):
        return np.zeros(np.shape(x) + (dim_U,))

    def F(t, x, u):
        return np.zeros_like(np.asarray(x, dtype=float))

    return CoefficientSet(f, g, F, F, 0.0, omega, dim, dim_U, "zero")


def _periodic_family(dim, dim_U, L, omega, *, qspec, levy, amplitude=1.0, decay_rate=0.5,
                     sigma=0.1, **_):
    # noise coefficients carry a pure decay envelope: a periodic noise amplitude
    # keeps E|x(t+omega)-x(t)|^2 bounded away from zero for a fixed noise path
    forcing = build_periodic_plus_decay(omega, amplitude, decay_rate)
    envelope = PeriodicPlusDecay(omega, 1.0, decay_rate, periodic_weight=0.0)
    return _linear_family(dim, dim_U, L, omega, qspec=qspec, levy=levy, forcing=forcing,
                          envelope=envelope, sigma=sigma, name="periodic")


def _additive_family(dim, dim_U, L, omega, *, qspec, levy, amplitude=1.0, decay_rate=0.5,
                     sigma=0.1, **_):
    forcing = build_periodic_plus_decay(omega, amplitude, decay_rate)
    envelope = PeriodicPlusDecay(omega, 1.0, decay_rate, periodic_weight=0.0)
    return _linear_family(dim, dim_U, 0.0, omega, qspec=qspec, levy=levy, forcing=forcing,
                          envelope=envelope, sigma=sigma, feedback=False, name="additive")


REGISTRY: dict[str, Callable[..., CoefficientSet]] = {
    "zero": _zero_family,
    "linear": lambda dim, dim_U, L, omega, *, qspec, levy, sigma=0.0, **_: _linear_family(
        dim, dim_U, L, omega, qspec=qspec, levy=levy, sigma=sigma, name="linear"),
    "saturated": lambda dim, dim_U, L, omega, *, qspec, levy, sigma=0.0, **_: _linear_family(
        dim, dim_U, L, omega, qspec=qspec, levy=levy, shape=_saturate, sigma=sigma, name="saturated"),
    "periodic": _periodic_family,
    "additive": _additive_family,
}


def make_coefficients(name: str, dim: int, dim_U: int, L: float, omega: int = 1, *,
                      qspec: QWienerSpec | None = None, levy: LevyMeasureSpec | None = None,
                      **params) -> CoefficientSet:
    """Build a registered coefficient family (see ``REGISTRY``)."""
    if name not in REGISTRY:
        raise KeyError(f"unknown coefficient set {name!r}; known: {sorted(REGISTRY)}")
    if not L >= 0:
        raise ValueError("L must be nonnegative")
    return REGISTRY[name](dim, dim_U, L, omega, qspec=qspec, levy=levy, **params)


# --- diagnostics -----------------------------------------------------------

def _g_weighted_sq(dg: np.ndarray, q: np.ndarray) -> np.ndarray:
    """sum_k q_k |dg e_k|^2 for stacked matrices dg (n, d, m)."""
    return np.einsum("ndk,k->n", dg ** 2, q)


def _nu_integrated_sq(levy: LevyMeasureSpec, region: str, fn, t, x, x1) -> np.ndarray:
    out = integrate_against_nu(levy, region, lambda u: np.sum((fn(t, x, u) - fn(t, x1, u)) ** 2, axis=-1),
                               guard=False)
    return np.asarray(out)


def lipschitz_estimate(coeff: CoefficientSet, which: str, probe_sampler: Callable, n_pairs: int,
                       rng: np.random.Generator, *, qspec: QWienerSpec | None = None,
                       levy: LevyMeasureSpec | None = None, t_range: tuple[float, float] = (0.0, 0.0)) -> float:
    """Largest sampled Lipschitz ratio: a statistical lower bound for L.

    ``probe_sampler(rng, n)`` returns ``n`` states of shape ``(n, dim)``. Pairs
    that coincide are skipped.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    t = float(rng.uniform(*t_range)) if t_range[1] > t_range[0] else float(t_range[0])
    x, y, x1, y1 = (np.asarray(probe_sampler(rng, n_pairs), dtype=float) for _ in range(4))
    if which in ("f", "g"):
        den = np.sum((x - x1) ** 2, axis=-1) + np.sum((y - y1) ** 2, axis=-1)
        if which == "f":
            num = np.sum((coeff.f(t, x, y) - coeff.f(t, x1, y1)) ** 2, axis=-1)
        else:
            if qspec is None:
                raise ValueError("g estimate needs the Q-Wiener spec")
            num = _g_weighted_sq(coeff.g(t, x, y) - coeff.g(t, x1, y1), qspec.q)
    elif which in ("F", "G"):
        if levy is None:
            raise ValueError("F/G estimates need the Levy measure")
        den = np.sum((x - x1) ** 2, axis=-1)
        num = _nu_integrated_sq(levy, "small" if which == "F" else "large",
                                coeff.F if which == "F" else coeff.G, t, x, x1)
    else:
        raise ValueError(f"which must be one of f, g, F, G; got {which!r}")
    keep = den > 0
    if not keep.any():
        return 0.0
    return float(np.max(num[keep] / den[keep]))


def coefficient_sap_defect(coeff: CoefficientSet, which: str, omega: int, t: float, probe_set,
                           *, qspec: QWienerSpec | None = None, levy: LevyMeasureSpec | None = None) -> float:
    """max over probes of the squared omega-shift defect of one coefficient at time t.

    ``probe_set`` is a sequence of ``(x_floor, x)`` pairs; F and G only use ``x``.
    """
    probes = list(probe_set)
    if not probes:
        raise ValueError("probe_set must be nonempty")
    xf = np.array([np.asarray(p[0], dtype=float) for p in probes])
    x = np.array([np.asarray(p[1], dtype=float) for p in probes])
    s = t + omega
    if which == "f":
        d = np.sum((coeff.f(s, xf, x) - coeff.f(t, xf, x)) ** 2, axis=-1)
    elif which == "g":
        if qspec is None:
            raise ValueError("g defect needs the Q-Wiener spec")
        d = _g_weighted_sq(coeff.g(s, xf, x) - coeff.g(t, xf, x), qspec.q)
    elif which in ("F", "G"):
        if levy is None:
            raise ValueError("F/G defects need the Levy measure")
        fn = coeff.F if which == "F" else coeff.G
        region = "small" if which == "F" else "large"
        d = np.asarray(integrate_against_nu(
            levy, region, lambda u: np.sum((fn(s, x, u) - fn(t, x, u)) ** 2, axis=-1), guard=False))
    else:
        raise ValueError(f"which must be one of f, g, F, G; got {which!r}")
    return float(np.max(d))
