"""Grid paths of the mild solution, by direct stepping and by Picard iteration.

Scheme: every convolution term at node t_j is a left-point sum over earlier
subintervals with the exact kernel S_alpha(t_j - t_i). Integrands use the
left node value for x(s), x([s]) and x(s-). Small jumps are binned to the left
node of their subinterval; large jumps keep their exact time in the kernel.

Paths are simulated as an ensemble: arrays carry a leading path axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from fraclevy import kernels
from fraclevy.coefficients import CoefficientSet
from fraclevy.levy_noise import (
    JumpEvent,
    LevyMeasureSpec,
    QWienerSpec,
    SeedSpec,
    sample_jump_events,
    sample_wiener_increments,
)
from fraclevy.special_fn import (
    DEFAULT_CONFIG,
    MLEvalConfig,
    as_alpha,
    convolution_constants,
    ml,
    squared_exponent_middle_constant,
)
from fraclevy.spectral_model import (
    SectorialSpectralModel,
    kernel_table,
    require_valid,
    solution_operator_diagonal,
)

TERMS = ("initial", "drift", "wiener", "small_jump", "large_jump")


@dataclass(frozen=True)
class SimGrid:
    horizon: float
    steps_per_unit: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        m = self.steps_per_unit
        if isinstance(m, bool) or not float(m).is_integer() or m < 1:
            raise ValueError("steps_per_unit must be a positive integer")
        object.__setattr__(self, "steps_per_unit", int(m))

    @property
    def h(self) -> float:
        return 1.0 / self.steps_per_unit

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon * self.steps_per_unit - 1e-9))

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) / self.steps_per_unit

    def floor_index(self, j: int) -> int:
        """Node index of floor(t_j)."""
        return (j // self.steps_per_unit) * self.steps_per_unit

    def node_index(self, t: float) -> int:
        j = round(t * self.steps_per_unit)
        if abs(t * self.steps_per_unit - j) > 1e-9 or not 0 <= j < self.n_nodes:
            raise ValueError(f"time {t} is not a node of the grid on [0, {self.n_steps * self.h}]")
        return int(j)


@dataclass(frozen=True)
class JumpLogEntry:
    event: JumpEvent
    pre_state: np.ndarray
    post_state: np.ndarray


@dataclass(frozen=True)
class PathRecord:
    grid: SimGrid
    values: np.ndarray            # (n_nodes, d)
    terms: dict                   # term name -> (n_nodes, d)
    jump_log: list = field(default_factory=list)


@dataclass
class Ensemble:
    """Stacked paths: ``values`` and each term array have shape (P, n_nodes, d)."""

    grid: SimGrid
    values: np.ndarray
    terms: dict
    jump_logs: list

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, p: int) -> PathRecord:
        return PathRecord(self.grid, self.values[p], {k: v[p] for k, v in self.terms.items()},
                          self.jump_logs[p])

    def __iter__(self):
        return (self[p] for p in range(len(self)))

    @classmethod
    def from_values(cls, grid: SimGrid, values) -> Ensemble:
        """Wrap externally produced node values; the whole signal sits in the initial term."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3 or values.shape[1] != grid.n_nodes:
            raise ValueError(f"values must have shape (P, {grid.n_nodes}, d)")
        terms = {k: np.zeros_like(values) for k in TERMS}
        terms["initial"] = values.copy()
        return cls(grid, values, terms, [[] for _ in range(values.shape[0])])


@dataclass
class FrozenNoise:
    """One noise realisation per path: Wiener increments on a ``noise_m`` grid plus jumps."""

    wiener: np.ndarray            # (P, n_fine_steps, dim_U)
    noise_m: int
    events: list                  # per path: list[JumpEvent]
    horizon: float

    @property
    def n_paths(self) -> int:
        return self.wiener.shape[0]

    @property
    def dim_U(self) -> int:
        return self.wiener.shape[2]

    @classmethod
    def sample(cls, qspec: QWienerSpec, levy: LevyMeasureSpec, horizon: float, noise_m: int,
               n_paths: int, seed: SeedSpec | int, first_path: int = 0) -> FrozenNoise:
        if n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if levy.dim_U != qspec.dim_U:
            raise ValueError("Wiener and jump noise must share dim_U")
        seed = seed if isinstance(seed, SeedSpec) else SeedSpec(seed)
        fine = SimGrid(horizon, noise_m)
        w = np.empty((n_paths, fine.n_steps, qspec.dim_U))
        events = []
        for p in range(n_paths):
            idx = first_path + p
            w[p] = sample_wiener_increments(qspec, fine, seed.stream(idx, SeedSpec.WIENER))
            events.append(sample_jump_events(levy, horizon, seed.stream(idx, SeedSpec.JUMPS)))
        return cls(w, int(noise_m), events, float(horizon))

    @classmethod
    def silent(cls, dim_U: int, horizon: float, noise_m: int, n_paths: int = 1,
               events: list | None = None) -> FrozenNoise:
        """No Wiener noise; optional scripted jump events (same list for every path)."""
        n = SimGrid(horizon, noise_m).n_steps
        evs = [list(events or []) for _ in range(n_paths)]
        return cls(np.zeros((n_paths, n, dim_U)), int(noise_m), evs, float(horizon))

    def wiener_on(self, grid: SimGrid) -> np.ndarray:
        m = grid.steps_per_unit
        if self.noise_m % m:
            raise ValueError(f"noise resolution {self.noise_m} is not a multiple of grid m={m}")
        r = self.noise_m // m
        n = grid.n_steps
        if n * r > self.wiener.shape[1]:
            raise ValueError("noise realisation is shorter than the grid horizon")
        w = self.wiener[:, :n * r]
        return w.reshape(self.n_paths, n, r, self.dim_U).sum(axis=2)


def gaussian_initial(seed: SeedSpec | int, n_paths: int, mean, std) -> np.ndarray:
    """Independent Gaussian initial states, one stream per path."""
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(seed)
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    return np.array([mean + std * seed.stream(p, SeedSpec.INITIAL).standard_normal(mean.shape)
                     for p in range(n_paths)])


class _Scheme:
    """Everything about one discretised problem that does not depend on the state."""

    def __init__(self, model, alpha, coeff: CoefficientSet, levy: LevyMeasureSpec, grid: SimGrid,
                 noise: FrozenNoise, c0, cfg: MLEvalConfig, n_quad: int = 24):
        a = as_alpha(alpha)
        require_valid(model, a)
        if coeff.dim != model.dim:
            raise ValueError(f"coefficient dim {coeff.dim} != model dim {model.dim}")
        if noise.dim_U != coeff.dim_U or levy.dim_U != coeff.dim_U:
            raise ValueError("noise dimension mismatch between coefficients, Wiener and jump specs")
        self.model, self.alpha, self.coeff, self.levy, self.grid = model, a, coeff, levy, grid
        self.P = noise.n_paths
        n, d = grid.n_nodes, model.dim
        self.times = grid.times
        self.K = np.ascontiguousarray(kernel_table(model, a, grid.h, n, cfg))
        c0 = np.asarray(c0, dtype=float)
        if c0.shape[-1] != d:
            raise ValueError(f"c0 has length {c0.shape[-1]}, model dim is {d}")
        self.c0 = np.broadcast_to(c0, (self.P, d)).copy()
        self.initial = self.K[None, :, :] * self.c0[:, None, :]
        self.dW = np.ascontiguousarray(noise.wiener_on(grid))
        self.floor = np.array([grid.floor_index(j) for j in range(n)])

        small, large = [], []
        for p, evs in enumerate(noise.events):
            for e in evs:
                if e.time >= grid.n_steps * grid.h:
                    continue
                (small if e.kind == "small" else large).append((p, e))
        self.small_events = small
        self.small_bin = np.array([int(e.time * grid.steps_per_unit) for _, e in small], dtype=int)
        self.small_path = np.array([p for p, _ in small], dtype=int)
        self.small_marks = np.array([e.mark for _, e in small]).reshape(len(small), coeff.dim_U)
        self.large_events = large
        self.large_bin = np.array([int(e.time * grid.steps_per_unit) for _, e in large], dtype=int)
        self.large_path = np.array([p for p, _ in large], dtype=int)
        self.large_marks = np.array([e.mark for _, e in large]).reshape(len(large), coeff.dim_U)
        self.large_time = np.array([e.time for _, e in large], dtype=float)
        self.large_start = self.large_bin + 1
        if large:
            dt = self.times[None, :] - self.large_time[:, None]
            live = np.arange(n)[None, :] >= self.large_start[:, None]
            ek = solution_operator_diagonal(model, a, np.where(live, dt, 0.0), cfg)
            self.ekern = np.ascontiguousarray(np.where(live[..., None], ek, 0.0))
        else:
            self.ekern = np.zeros((0, n, d))

        # all events of a bin, ordered by path then time, with their rank inside (bin, path)
        kind = np.r_[np.zeros(len(small), int), np.ones(len(large), int)]
        idx = np.r_[np.arange(len(small)), np.arange(len(large))].astype(int)
        ebin = np.r_[self.small_bin, self.large_bin].astype(int)
        epath = np.r_[self.small_path, self.large_path].astype(int)
        etime = np.array([e.time for _, e in small] + [e.time for _, e in large], dtype=float)
        order = np.lexsort((etime, epath, ebin))
        self.ev_kind, self.ev_idx, self.ev_path = kind[order], idx[order], epath[order]
        key = np.c_[ebin[order], epath[order]]
        rank = np.zeros(order.size, dtype=int)
        for r in range(1, order.size):
            if (key[r] == key[r - 1]).all():
                rank[r] = rank[r - 1] + 1
        self.ev_rank = rank
        self.ev_ptr = np.searchsorted(ebin[order], np.arange(n + 1))
        self.event_bins = np.unique(ebin)

        part = levy.small
        if part.mass > 0:
            nodes, w = part.marks.quadrature(n_quad)
            self.comp_nodes, self.comp_weights = nodes, w * part.mass
        else:
            self.comp_nodes, self.comp_weights = np.zeros((0, coeff.dim_U)), np.zeros(0)

    def jump_values(self, i: int, xi: np.ndarray):
        """Jump sizes of the events in bin ``i``.

        The pre-jump state is the left node value plus the jumps of earlier
        events of the same path in the same bin, so coincident jumps compose.
        Returns ``(small_rows, small_vals, small_pre, large_rows, large_vals, large_pre)``.
        """
        d = self.model.dim
        seg = np.arange(self.ev_ptr[i], self.ev_ptr[i + 1])
        kinds, idx, paths, ranks = self.ev_kind[seg], self.ev_idx[seg], self.ev_path[seg], self.ev_rank[seg]
        vals = np.empty((seg.size, d))
        pre = np.empty((seg.size, d))
        off = np.zeros((self.P, d)) if seg.size and ranks.max() > 0 else None
        t = self.times[i]
        for r in range(ranks.max() + 1 if seg.size else 0):
            at = np.flatnonzero(ranks == r)
            pp = paths[at]
            pre[at] = xi[pp] if off is None else xi[pp] + off[pp]
            sm = at[kinds[at] == 0]
            if sm.size:
                vals[sm] = np.asarray(self.coeff.F(t, pre[sm], self.small_marks[idx[sm]]), dtype=float)
            for q in at[kinds[at] == 1]:
                e = idx[q]
                vals[q] = self.coeff.G(self.large_time[e], pre[q][None, :], self.large_marks[e])[0]
            if off is not None:
                off[pp] += vals[at]
        s_, l_ = kinds == 0, kinds == 1
        return idx[s_], vals[s_], pre[s_], idx[l_], vals[l_], pre[l_]

    def increments(self, i: int, xi: np.ndarray, xf: np.ndarray, small_rows=None, small_vals=None):
        """Drift, Wiener and compensated small-jump increments over [t_i, t_{i+1})."""
        cf, h, t = self.coeff, self.grid.h, self.times[i]
        inc_d = np.asarray(cf.f(t, xf, xi), dtype=float) * h
        gm = np.asarray(cf.g(t, xf, xi), dtype=float)
        inc_w = np.einsum("pdk,pk->pd", gm, self.dW[:, i])
        inc_s = np.zeros_like(xi)
        for u, w in zip(self.comp_nodes, self.comp_weights):
            inc_s -= h * w * np.asarray(cf.F(t, xi, u), dtype=float)
        if small_rows is not None and small_rows.size:
            np.add.at(inc_s, self.small_path[small_rows], small_vals)
        return inc_d, inc_w, inc_s

    def _assemble(self, acc):
        values = self.initial + acc["drift"] + acc["wiener"] + acc["small_jump"] + acc["large_jump"]
        terms = {"initial": np.broadcast_to(self.initial, values.shape).copy(), **acc}
        return values, terms

    def step(self, keep_log: bool = True):
        """Direct explicit stepping, node by node."""
        P, n, d = self.P, self.grid.n_nodes, self.model.dim
        acc = {k: np.zeros((P, n, d)) for k in TERMS[1:]}
        x = np.empty((P, n, d))
        x[:, 0] = self.initial[:, 0]
        logs = [[] for _ in range(P)]
        for i in range(n - 1):
            xi = np.ascontiguousarray(x[:, i])
            xf = x[:, self.floor[i]]
            srows, svals, spre, lrows, lvals, lpre = self.jump_values(i, xi)
            inc_d, inc_w, inc_s = self.increments(i, xi, xf, srows, svals)
            kernels.scatter_forward(acc["drift"], self.K, inc_d, i)
            kernels.scatter_forward(acc["wiener"], self.K, inc_w, i)
            kernels.scatter_forward(acc["small_jump"], self.K, inc_s, i)
            if lrows.size:
                kernels.event_scatter(acc["large_jump"], self.large_path[lrows], self.large_start[lrows],
                                      np.ascontiguousarray(self.ekern[lrows]), np.ascontiguousarray(lvals))
            if keep_log:
                for rows, vals, pre, evs in ((srows, svals, spre, self.small_events),
                                             (lrows, lvals, lpre, self.large_events)):
                    for r, v, x0 in zip(rows, vals, pre):
                        p, ev = evs[r]
                        logs[p].append(JumpLogEntry(ev, x0.copy(), x0 + v))
            j = i + 1
            x[:, j] = (self.initial[:, j] + acc["drift"][:, j] + acc["wiener"][:, j]
                       + acc["small_jump"][:, j] + acc["large_jump"][:, j])
        for lg in logs:
            lg.sort(key=lambda e: e.event.time)
        values, terms = self._assemble(acc)
        return values, terms, logs

    def apply_map(self, x: np.ndarray):
        """One application of the discrete mild map to a whole trajectory ensemble."""
        P, n, d = x.shape
        inc = {k: np.zeros((P, n, d)) for k in ("drift", "wiener", "small_jump")}
        lrows_all, lvals_all = [], []
        has_events = np.zeros(n, dtype=bool)
        has_events[self.event_bins[self.event_bins < n]] = True
        for i in range(n - 1):
            xi = np.ascontiguousarray(x[:, i])
            srows = svals = None
            if has_events[i]:
                srows, svals, _, lrows, lvals, _ = self.jump_values(i, xi)
                lrows_all.append(lrows)
                lvals_all.append(lvals)
            inc_d, inc_w, inc_s = self.increments(i, xi, x[:, self.floor[i]], srows, svals)
            inc["drift"][:, i], inc["wiener"][:, i], inc["small_jump"][:, i] = inc_d, inc_w, inc_s
        acc = {k: kernels.causal_conv(self.K, v) for k, v in inc.items()}
        acc["large_jump"] = np.zeros((P, n, d))
        if lrows_all:
            lrows = np.concatenate(lrows_all)
            if lrows.size:
                lvals = np.concatenate(lvals_all)
                kernels.event_scatter(acc["large_jump"], self.large_path[lrows], self.large_start[lrows],
                                      np.ascontiguousarray(self.ekern[lrows]), np.ascontiguousarray(lvals))
        return self._assemble(acc)


def simulate_ensemble(model: SectorialSpectralModel, alpha, coeff: CoefficientSet, qspec: QWienerSpec,
                      levy: LevyMeasureSpec, grid: SimGrid, c0, *, noise: FrozenNoise | None = None,
                      seed: SeedSpec | int = 0, n_paths: int = 1, cfg: MLEvalConfig = DEFAULT_CONFIG,
                      keep_log: bool = True) -> Ensemble:
    """Simulate ``n_paths`` paths (or one per path of a given frozen ``noise``)."""
    if noise is None:
        noise = FrozenNoise.sample(qspec, levy, grid.horizon, grid.steps_per_unit, n_paths, seed)
    scheme = _Scheme(model, alpha, coeff, levy, grid, noise, c0, cfg)
    values, terms, logs = scheme.step(keep_log)
    return Ensemble(grid, values, terms, logs)


def simulate_path(model, alpha, coeff, qspec, levy, grid, c0, *, noise: FrozenNoise | None = None,
                  seed: SeedSpec | int = 0, path_index: int = 0,
                  cfg: MLEvalConfig = DEFAULT_CONFIG) -> PathRecord:
    """A single path; its noise is the stream ``path_index`` of ``seed``."""
    if noise is None:
        noise = FrozenNoise.sample(qspec, levy, grid.horizon, grid.steps_per_unit, 1, seed,
                                   first_path=path_index)
    return simulate_ensemble(model, alpha, coeff, qspec, levy, grid, c0, noise=noise, cfg=cfg)[0]


def deterministic_convolution(model: SectorialSpectralModel, alpha, c, t: float,
                              tol: float = 1e-8, cfg: MLEvalConfig = DEFAULT_CONFIG) -> np.ndarray:
    """int_0^t S_alpha(t - s) c ds, coordinate by coordinate, by adaptive quadrature."""
    a = as_alpha(alpha)
    c = np.asarray(c, dtype=float)
    if t < 0:
        raise ValueError("t must be nonnegative")
    out = np.zeros(model.dim)
    if t == 0:
        return out
    for k, mu_k in enumerate(model.eigenvalues):
        if c[k] == 0:
            continue
        val, err, info = integrate.quad(lambda s: ml(a, mu_k * s ** a, cfg), 0.0, t,
                                        epsabs=tol, epsrel=tol, limit=200, full_output=True)[:3]
        if err > 10 * max(tol, tol * abs(val)):
            raise ArithmeticError(f"quadrature did not converge for coordinate {k}: error {err}")
        out[k] = c[k] * val
    return out


# --- Picard iteration ------------------------------------------------------

@dataclass
class PicardReport:
    iterates_sup_diff: list
    C_tilde: float
    C_tilde_measured: float
    M_tilde: float
    c1: float
    c2: float
    c2_factor4: float
    converged: bool
    iterations: int
    tol: float


def moment_constants(model: SectorialSpectralModel, alpha, L: float, b: float, c0) -> dict:
    """Constants of the moment bound and of the factorial envelope of the Picard differences."""
    a = as_alpha(alpha)
    cm2 = (model.bound_C * model.bound_M) ** 2
    c0 = np.asarray(c0, dtype=float)
    c0sq = float(np.mean(np.sum(c0.reshape(-1, c0.shape[-1]) ** 2, axis=-1)))
    C1, _ = convolution_constants(a, model.mu)
    C2p = squared_exponent_middle_constant(a, model.mu)
    bracket = 2 * C1 + 5 + 2 * b * C1
    return {
        "C1": C1,
        "C2_paper": C2p,
        "C_tilde": cm2 * c0sq * L * (4 * C1 ** 2 + 16 * C2p + 8 * b * C1 ** 2),
        "M_tilde": 4 * cm2 * L * bracket,
        "c1": 5 * cm2 * c0sq,
        "c2": 5 * cm2 * L * bracket,
        "c2_factor4": 4 * cm2 * L * bracket,
    }


def _sup_rms(diff: np.ndarray) -> float:
    return float(np.sqrt(np.max(np.mean(np.sum(diff ** 2, axis=-1), axis=0))))


MIN_ITERATES = 3


def picard_solve(model, alpha, coeff: CoefficientSet, levy: LevyMeasureSpec, noise: FrozenNoise,
                 grid: SimGrid, c0, tol: float = 1e-8, max_iter: int = 50,
                 cfg: MLEvalConfig = DEFAULT_CONFIG) -> tuple[Ensemble, PicardReport]:
    """Successive approximations on frozen noise, starting from x_0(t) = S_alpha(t) c0.

    Stops once the sup-node ensemble root-mean-square difference of consecutive
    iterates drops below ``tol``, so the limit is within about ``tol`` of the
    fixed point. At least ``MIN_ITERATES`` differences are recorded (when
    ``max_iter`` allows) so the envelope check always has data. Non-convergence
    is reported, not raised.
    """
    if not tol > 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    scheme = _Scheme(model, alpha, coeff, levy, grid, noise, c0, cfg)
    x = scheme.initial.copy()
    diffs = []
    converged = False
    values, terms = x, None
    for _ in range(max_iter):
        values, terms = scheme.apply_map(x)
        diffs.append(_sup_rms(values - x))
        x = values
        if diffs[-1] < tol and len(diffs) >= MIN_ITERATES:
            converged = True
            break
    if terms is None:
        values, terms = scheme.apply_map(x)
    consts = moment_constants(model, alpha, coeff.lipschitz_L, levy.b, scheme.c0)
    report = PicardReport(
        iterates_sup_diff=diffs,
        C_tilde=consts["C_tilde"],
        C_tilde_measured=diffs[0] ** 2 if diffs else 0.0,
        M_tilde=consts["M_tilde"],
        c1=consts["c1"], c2=consts["c2"], c2_factor4=consts["c2_factor4"],
        converged=converged, iterations=len(diffs), tol=tol)
    return Ensemble(grid, values, terms, [[] for _ in range(len(values))]), report


@dataclass
class EnvelopeCheck:
    ok: bool
    C_tilde_used: float
    bounds: list
    ratios: list


def verify_picard_envelope(report: PicardReport, T: float, safety_factor: float = 10.0,
                           use_measured: bool = True) -> EnvelopeCheck:
    """Check diff_n**2 <= safety * C (M T)**n / n! for every recorded n.

    ``C`` is the formula constant, raised to the measured first difference when
    ``use_measured`` (the formula presumes coefficients vanishing at zero).
    """
    diffs = report.iterates_sup_diff
    if len(diffs) < MIN_ITERATES:
        raise ValueError(f"envelope check needs at least {MIN_ITERATES} iterates, report has {len(diffs)}")
    C = max(report.C_tilde, report.C_tilde_measured) if use_measured else report.C_tilde
    x = report.M_tilde * T
    bounds, ratios, ok = [], [], True
    for n, dn in enumerate(diffs):
        bound = C * x ** n / math.factorial(n)
        sq = dn ** 2
        bounds.append(bound)
        if bound > 0:
            ratios.append(sq / bound)
        else:
            ratios.append(0.0 if sq == 0 else math.inf)
        if sq > safety_factor * bound:
            ok = False
    return EnvelopeCheck(ok, C, bounds, ratios)
