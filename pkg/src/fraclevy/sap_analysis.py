"""Square-mean omega-periodicity defects of path ensembles and the contraction constant."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from fraclevy.mild_solver import TERMS, Ensemble, PathRecord
from fraclevy.special_fn import as_alpha, convolution_constants, squared_exponent_middle_constant

TERM_SELECTORS = ("full",) + TERMS
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class PeriodicityQuery:
    omega: int
    eval_times: tuple
    n_paths: int | None = None
    confidence_z: float = 3.0

    def __post_init__(self):
        if isinstance(self.omega, bool) or not float(self.omega).is_integer() or self.omega < 1:
            raise ValueError("omega must be a positive integer")
        object.__setattr__(self, "omega", int(self.omega))
        times = tuple(float(t) for t in np.atleast_1d(self.eval_times))
        if not times or min(times) < 0:
            raise ValueError("eval_times must be a nonempty list of nonnegative times")
        object.__setattr__(self, "eval_times", times)
        if self.n_paths is not None and self.n_paths < 1:
            raise ValueError("n_paths must be a positive integer")
        if not self.confidence_z >= 0:
            raise ValueError("confidence_z must be nonnegative")


@dataclass(frozen=True)
class DefectCurve:
    times: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    n_paths: int
    omega: int
    term: str = "full"
    normalizer: float = 1.0
    confidence_z: float = 3.0


def _stack(ensemble, term: str) -> tuple:
    if isinstance(ensemble, Ensemble):
        grid = ensemble.grid
        arr = ensemble.values if term == "full" else ensemble.terms[term]
        return grid, arr
    paths = list(ensemble)
    if not paths:
        raise ValueError("ensemble is empty")
    grid = paths[0].grid
    if any(p.grid != grid for p in paths):
        raise ValueError("all paths must share one grid")
    pick = (lambda p: p.values) if term == "full" else (lambda p: p.terms[term])
    return grid, np.stack([pick(p) for p in paths])


def _mean_and_stderr(samples: np.ndarray) -> tuple:
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(n)


def square_mean_defect(ensemble: Ensemble | list[PathRecord], query: PeriodicityQuery,
                       term_selector: str = "full", normalize: bool = False) -> DefectCurve:
    """Monte Carlo estimate of E|x(t + omega) - x(t)|^2 at each eval time.

    With ``normalize`` the estimates and standard errors are divided by the
    ensemble sup over nodes of E|x(t)|^2 (always of the full solution).
    """
    if term_selector not in TERM_SELECTORS:
        raise ValueError(f"term_selector must be one of {TERM_SELECTORS}")
    grid, arr = _stack(ensemble, term_selector)
    if arr.shape[0] == 0:
        raise ValueError("ensemble is empty")
    if query.n_paths is not None:
        if query.n_paths > arr.shape[0]:
            raise ValueError(f"query asks for {query.n_paths} paths, ensemble has {arr.shape[0]}")
        arr = arr[:query.n_paths]
    shift = query.omega * grid.steps_per_unit
    idx = []
    for t in query.eval_times:
        try:
            j = grid.node_index(t)
            grid.node_index(t + query.omega)
        except ValueError:
            raise ValueError(f"eval time {t} (+ omega {query.omega}) is outside the horizon "
                             f"or off the grid") from None
        idx.append(j)
    idx = np.array(idx)
    sq = np.sum((arr[:, idx + shift] - arr[:, idx]) ** 2, axis=-1)
    est, se = _mean_and_stderr(sq)
    norm = 1.0
    if normalize:
        _, full = _stack(ensemble, "full")
        full = full[:arr.shape[0]]
        norm = float(np.max(np.mean(np.sum(full ** 2, axis=-1), axis=0)))
        if norm > 0:
            est, se = est / norm, se / norm
        else:
            norm = 1.0
    return DefectCurve(np.array(query.eval_times), est, se, arr.shape[0], query.omega,
                       term_selector, norm, query.confidence_z)


def default_window(horizon: float, omega: int) -> tuple:
    return (horizon / 2.0, horizon - omega)


@dataclass(frozen=True)
class SAPVerdict:
    passed: bool
    terminal_ok: bool
    slope_ok: bool
    terminal_value: float
    terminal_stderr: float
    threshold: float
    slope: float
    slope_stderr: float
    window: tuple


def sap_verdict(curve: DefectCurve, decay_window: tuple, threshold: float = 1e-2,
                confidence_z: float | None = None) -> SAPVerdict:
    """Terminal-threshold test plus log-linear decay fit over ``decay_window``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    t0, t1 = float(decay_window[0]), float(decay_window[1])
    tol = 1e-9
    if t0 < curve.times.min() - tol or t1 > curve.times.max() + tol or t1 < t0:
        raise ValueError(f"decay window {decay_window} is not inside the eval range "
                         f"[{curve.times.min()}, {curve.times.max()}]")
    sel = (curve.times >= t0 - tol) & (curve.times <= t1 + tol)
    if sel.sum() < 2:
        raise ValueError("decay window is degenerate: it must hold at least two eval times")
    z = curve.confidence_z if confidence_z is None else confidence_z
    ts, est, se = curve.times[sel], curve.estimates[sel], curve.stderr[sel]
    last = int(np.argmax(ts))
    term_val, term_se = float(est[last]), float(se[last])
    terminal_ok = term_val < threshold + z * term_se
    if np.all(est <= _LOG_FLOOR):
        slope, slope_se = 0.0, 0.0
    else:
        fit = stats.linregress(ts, np.log(np.maximum(est, _LOG_FLOOR)))
        slope = float(fit.slope)
        slope_se = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    slope_ok = slope - slope_se <= 0.0
    return SAPVerdict(bool(terminal_ok and slope_ok), bool(terminal_ok), bool(slope_ok), term_val,
                      term_se, threshold, slope, slope_se, (t0, t1))


@dataclass(frozen=True)
class ContractionReport:
    C: float
    M: float
    L: float
    alpha: float
    mu: float
    b: float
    C1: float
    C2: float
    C2_paper: float
    kappa_paper: float
    kappa_consistent: float
    variant: str
    verdict: bool
    proof_step_constant: float

    @property
    def kappa(self) -> float:
        return self.kappa_paper if self.variant == "paper" else self.kappa_consistent


def contraction_constant(C: float, M: float, L: float, alpha, mu: float, b: float,
                         variant: str = "paper") -> ContractionReport:
    """kappa = 2 C M sqrt(L (2 C1 + 5 C2 + 2 b C1^2)); the verdict is kappa < 1.

    ``variant="paper"`` puts the |mu|^(-2/alpha) middle constant in
    place of C2; ``"consistent"`` uses the quadrature-consistent C2.
    """
    if variant not in ("paper", "consistent"):
        raise ValueError("variant must be 'paper' or 'consistent'")
    if not (C > 0 and M > 0):
        raise ValueError("C and M must be positive")
    if not (L >= 0 and b >= 0):
        raise ValueError("L and b must be nonnegative")
    if not mu < 0:
        raise ValueError("mu must be negative")
    a = as_alpha(alpha)
    C1, C2 = convolution_constants(a, mu)
    C2p = squared_exponent_middle_constant(a, mu)
    cm = C * M
    k_cons = 2 * cm * math.sqrt(L * (2 * C1 + 5 * C2 + 2 * b * C1 ** 2))
    k_pap = 2 * cm * math.sqrt(L * (2 * C1 + 5 * C2p + 2 * b * C1 ** 2))
    aux = cm ** 2 * L * (8 * C1 ** 2 + 20 * C2 + 8 * b * C1 ** 2)
    sel = k_pap if variant == "paper" else k_cons
    return ContractionReport(C, M, L, a, mu, b, C1, C2, C2p, k_pap, k_cons, variant, bool(sel < 1), aux)


@dataclass(frozen=True)
class FloorSamplingResult:
    passed: bool
    floor_sup: float
    full_sup: float
    full_sup_stderr: float
    floor_times: np.ndarray
    full_curve: DefectCurve


def floor_sampling_check(ensemble, omega: int, T_tail: float, term_selector: str = "full",
                         confidence_z: float = 3.0) -> FloorSamplingResult:
    """Compare the defect of x([t]) (integer nodes) with the full-grid defect beyond ``T_tail``."""
    grid, _ = _stack(ensemble, term_selector)
    end = grid.n_steps * grid.h
    m = grid.steps_per_unit
    j0 = int(math.ceil(T_tail * m - 1e-9))
    j1 = int(round((end - omega) * m))
    if j1 < j0:
        raise ValueError(f"horizon {end} is too short for T_tail={T_tail} and omega={omega}")
    ks = np.arange(math.ceil(T_tail), math.floor(end - omega) + 1)
    if ks.size == 0:
        raise ValueError(f"no integer node in [{T_tail}, {end - omega}]")
    full = square_mean_defect(ensemble, PeriodicityQuery(omega, tuple(np.arange(j0, j1 + 1) / m),
                                                         confidence_z=confidence_z), term_selector)
    floor = square_mean_defect(ensemble, PeriodicityQuery(omega, tuple(ks.astype(float)),
                                                          confidence_z=confidence_z), term_selector)
    i = int(np.argmax(full.estimates))
    full_sup, full_se = float(full.estimates[i]), float(full.stderr[i])
    floor_sup = float(np.max(floor.estimates))
    return FloorSamplingResult(bool(floor_sup <= full_sup + confidence_z * full_se), floor_sup,
                               full_sup, full_se, ks.astype(float), full)
