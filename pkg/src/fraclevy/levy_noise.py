"""Driving noise: truncated Q-Wiener increments and Poisson jump marks.

Marks live in the truncated noise space R^dim_U. A mark is ``r * e`` where the
radius ``r`` follows a one-dimensional law and ``e`` is drawn uniformly from
the coordinate directions (``+e_k``, or ``+-e_k`` when symmetric), so ``|u| = r``.
Every mark law supports both sampling and deterministic quadrature; the
quadrature maps Gauss-Legendre nodes through the radial quantile function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import stats

from fraclevy.spectral_model import ValidationReport


class NonIntegrableError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QWienerSpec:
    q_eigs: tuple[float, ...]

    def __post_init__(self):
        q = tuple(float(v) for v in self.q_eigs)
        if not q:
            raise ValueError("q_eigs must be nonempty")
        if any(v < 0 for v in q):
            raise ValueError("q_eigs must be nonnegative")
        object.__setattr__(self, "q_eigs", q)

    @property
    def dim_U(self) -> int:
        return len(self.q_eigs)

    @property
    def trace(self) -> float:
        return float(sum(self.q_eigs))

    @property
    def q(self) -> np.ndarray:
        return np.array(self.q_eigs)


@dataclass(frozen=True)
class RadialMarks:
    """Mark law with radius ``radial`` (a frozen scipy distribution)."""

    radial: object
    dim: int = 1
    symmetric: bool = False

    @classmethod
    def uniform(cls, r_min: float, r_max: float, dim: int = 1, symmetric: bool = False) -> RadialMarks:
        if not 0 <= r_min < r_max:
            raise ValueError("need 0 <= r_min < r_max")
        return cls(stats.uniform(loc=r_min, scale=r_max - r_min), dim, symmetric)

    @classmethod
    def power_law(cls, exponent: float, r_min: float, r_max: float, dim: int = 1,
                  symmetric: bool = False) -> RadialMarks:
        """Radius density proportional to r**(-exponent) on [r_min, r_max)."""
        if not exponent > 1:
            raise ValueError("power-law exponent must exceed 1")
        if not 0 < r_min < r_max:
            raise ValueError("need 0 < r_min < r_max")
        return cls(stats.truncpareto(exponent - 1.0, r_max / r_min, scale=r_min), dim, symmetric)

    @property
    def support(self) -> tuple[float, float]:
        lo, hi = self.radial.support()
        return float(lo), float(hi)

    @property
    def directions(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return np.concatenate([eye, -eye]) if self.symmetric else eye

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        dirs = self.directions
        r = self.radial.ppf(rng.random(n))
        k = rng.integers(0, len(dirs), size=n)
        return r[:, None] * dirs[k]

    def quadrature(self, n_nodes: int = 24) -> tuple[np.ndarray, np.ndarray]:
        """Nodes (n, dim) and probability weights (n,) for E[h(u)]."""
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        r = self.radial.ppf(0.5 * (x + 1.0))
        w = 0.5 * w
        dirs = self.directions
        nodes = (r[None, :, None] * dirs[:, None, :]).reshape(-1, self.dim)
        weights = np.tile(w, len(dirs)) / len(dirs)
        return nodes, weights

    def second_moment(self) -> float:
        return float(self.radial.moment(2))


@dataclass(frozen=True)
class FiniteActivity:
    rate: float
    marks: RadialMarks

    @property
    def mass(self) -> float:
        return self.rate

    @property
    def bias_bound(self) -> float:
        return 0.0


@dataclass(frozen=True)
class InfiniteActivity:
    """Small jumps truncated at ``epsilon``; ``bias_bound`` is the dropped int |u|^2 nu."""

    epsilon: float
    rate_above_eps: float
    marks: RadialMarks
    bias_bound: float

    @property
    def mass(self) -> float:
        return self.rate_above_eps

    @classmethod
    def power_law(cls, scale: float, exponent: float, epsilon: float, dim: int = 1,
                  symmetric: bool = False) -> InfiniteActivity:
        """nu(|u| in dr) = scale * r**(-exponent) dr on (0, 1), 1 < exponent < 3."""
        if not 1 < exponent < 3:
            raise ValueError("exponent must lie in (1,3) for int(|u|^2 ^ 1) nu < inf")
        if not 0 < epsilon < 1:
            raise ValueError("epsilon must lie in (0,1)")
        p = exponent
        rate = scale * (epsilon ** (1 - p) - 1.0) / (p - 1.0)
        bias = scale * epsilon ** (3 - p) / (3 - p)
        return cls(epsilon, rate, RadialMarks.power_law(p, epsilon, 1.0, dim, symmetric), bias)


SmallJumps = Union[FiniteActivity, InfiniteActivity]


@dataclass(frozen=True)
class LargeJumps:
    b: float
    marks: RadialMarks

    @property
    def mass(self) -> float:
        return self.b


@dataclass(frozen=True)
class LevyMeasureSpec:
    small: SmallJumps
    large: LargeJumps
    moment_check: float = field(default=None)

    def __post_init__(self):
        if self.small.marks.dim != self.large.marks.dim:
            raise ValueError("small and large marks must share the noise dimension")
        if self.moment_check is None:
            object.__setattr__(self, "moment_check", self.small_second_moment() + self.large.b)

    @property
    def dim_U(self) -> int:
        return self.small.marks.dim

    @property
    def b(self) -> float:
        return self.large.b

    def small_second_moment(self) -> float:
        """int_{|u|<1} |u|^2 nu(du), including the truncated part."""
        return self.small.mass * self.small.marks.second_moment() + self.small.bias_bound

    def region(self, region: str):
        if region == "small":
            return self.small
        if region == "large":
            return self.large
        raise ValueError(f"region must be 'small' or 'large', got {region!r}")

    @classmethod
    def none(cls, dim: int = 1) -> LevyMeasureSpec:
        return cls(FiniteActivity(0.0, RadialMarks.uniform(0.0, 1.0, dim)),
                   LargeJumps(0.0, RadialMarks.uniform(1.0, 2.0, dim)))


@dataclass(frozen=True)
class JumpEvent:
    time: float
    mark: np.ndarray
    kind: str  # "small" | "large"

    def __post_init__(self):
        if self.kind not in ("small", "large"):
            raise ValueError("kind must be 'small' or 'large'")


@dataclass(frozen=True)
class SeedSpec:
    """Per-path random streams derived from one 64-bit master seed."""

    master_seed: int

    WIENER = 0
    JUMPS = 1
    INITIAL = 2

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def stream(self, path_index: int, purpose: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(path_index), int(purpose)))
        return np.random.Generator(np.random.PCG64(ss))


def validate_levy_measure(spec: LevyMeasureSpec, rng: np.random.Generator | None = None,
                          n_samples: int = 100_000) -> ValidationReport:
    rep = ValidationReport()
    rng = rng if rng is not None else np.random.default_rng(0)
    if spec.small.mass < 0 or spec.large.b < 0:
        rep.issues.append("jump intensities must be nonnegative")
    if not np.isfinite(spec.moment_check):
        rep.issues.append("int(|y|^2 ^ 1) nu(dy) is not finite")
        return rep
    lo, hi = spec.small.marks.support
    if hi > 1.0:
        rep.issues.append(f"small-jump marks reach |u|={hi} >= 1")
    if isinstance(spec.small, InfiniteActivity) and lo < spec.small.epsilon - 1e-15:
        rep.issues.append("truncated small-jump marks start below epsilon")
    llo, _ = spec.large.marks.support
    if llo < 1.0:
        rep.issues.append(f"large-jump marks reach |u|={llo} < 1")
    us = np.linalg.norm(spec.small.marks.sample(rng, n_samples), axis=1)
    ul = np.linalg.norm(spec.large.marks.sample(rng, n_samples), axis=1)
    if spec.small.mass > 0 and np.any(us >= 1.0):
        rep.issues.append("sampled small-jump mark with |u| >= 1")
    if spec.large.b > 0 and np.any(ul < 1.0):
        rep.issues.append("sampled large-jump mark with |u| < 1")
    mc = spec.small.mass * np.mean(np.minimum(us ** 2, 1.0)) + spec.small.bias_bound \
        + spec.large.b * np.mean(np.minimum(ul ** 2, 1.0))
    if abs(mc - spec.moment_check) > 0.05 * max(abs(spec.moment_check), 1e-300):
        rep.issues.append(f"moment_check {spec.moment_check} differs from Monte Carlo {mc} by more than 5%")
    return rep


def sample_wiener_increments(spec: QWienerSpec, grid, rng: np.random.Generator,
                             refine: int = 1) -> np.ndarray:
    """Increments over the ``grid`` steps, shape ``(n_steps, dim_U)``.

    With ``refine > 1`` the increments are drawn on a grid ``refine`` times
    finer and summed, so grids sharing a fine level share the noise path.
    Draws are sequential in time: a longer horizon only appends.
    """
    n = grid.n_steps * refine
    h = grid.h / refine
    z = rng.standard_normal((n, spec.dim_U)) * np.sqrt(h * spec.q)
    if refine == 1:
        return z
    return z.reshape(grid.n_steps, refine, spec.dim_U).sum(axis=1)


def _poisson_marked(rate: float, marks: RadialMarks, t0: float, rng: np.random.Generator):
    n = rng.poisson(rate) if rate > 0 else 0
    times = t0 + rng.random(n)
    return times, marks.sample(rng, n) if n else np.zeros((0, marks.dim))


def sample_jump_events(spec: LevyMeasureSpec, horizon: float, rng: np.random.Generator) -> list[JumpEvent]:
    """Jump events on [0, horizon), sorted by time.

    Each unit interval [k, k+1) gets a Poisson count and uniform times for the
    large class, then the small class; later intervals only append draws.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    events: list[JumpEvent] = []
    for k in range(int(np.ceil(horizon))):
        for kind, part in (("large", spec.large), ("small", spec.small)):
            times, marks = _poisson_marked(part.mass, part.marks, float(k), rng)
            events.extend(JumpEvent(float(t), m, kind) for t, m in zip(times, marks) if t < horizon)
    events.sort(key=lambda e: e.time)
    return events


def integrate_against_nu(spec: LevyMeasureSpec, region: str, h: Callable, *,
                         method: str = "quadrature", rng: np.random.Generator | None = None,
                         n_samples: int = 100_000, n_nodes: int = 24, guard: bool = True):
    """int_region h(u) nu(du); ``h`` maps one mark (dim_U,) to an array.

    The quadrature route is checked against a rule of twice the order and
    raises :class:`NonIntegrableError` if they disagree by more than 1e-3
    relative. The ``"mc"`` route averages over sampled marks.
    """
    part = spec.region(region)
    mass = part.mass
    if mass == 0:
        return np.zeros_like(np.asarray(h(np.zeros(spec.dim_U)), dtype=float))
    if method == "mc":
        rng = rng if rng is not None else np.random.default_rng()
        us = part.marks.sample(rng, n_samples)
        return mass * np.mean([np.asarray(h(u), dtype=float) for u in us], axis=0)
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")

    def rule(n):
        nodes, weights = part.marks.quadrature(n)
        acc = 0.0
        for u, w in zip(nodes, weights):
            acc = acc + w * np.asarray(h(u), dtype=float)
        return mass * acc

    val = rule(n_nodes)
    if guard:
        ref = rule(2 * n_nodes)
        scale = max(float(np.max(np.abs(ref))), 1e-300)
        if not (np.all(np.isfinite(val)) and np.all(np.isfinite(ref))) \
                or float(np.max(np.abs(val - ref))) > 1e-3 * scale + 1e-12:
            raise NonIntegrableError(f"integral over the {region} region does not settle under refinement")
    return val
