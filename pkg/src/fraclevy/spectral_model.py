"""Diagonal (spectrally truncated) sectorial operator and its solution operator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fraclevy.special_fn import DEFAULT_CONFIG, MLEvalConfig, as_alpha, ml_array


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class SectorialSpectralModel:
    """Operator A = diag(eigenvalues) in its own eigenbasis.

    ``mu`` is the sector type (every eigenvalue must sit at or below it),
    ``theta`` the sector angle, ``bound_C``/``bound_M`` the constants of the
    algebraic decay bound on the solution operator. Construction does not
    validate; see :func:`validate_model`.
    """

    eigenvalues: tuple[float, ...]
    mu: float
    theta: float
    bound_C: float = 1.0
    bound_M: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", tuple(float(e) for e in self.eigenvalues))

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def eig_array(self) -> np.ndarray:
        return np.array(self.eigenvalues)

    @classmethod
    def dirichlet_laplacian(cls, dim: int, scale: float = 1.0, theta: float = 0.1,
                            bound_C: float = 1.0, bound_M: float = 1.0) -> SectorialSpectralModel:
        """First ``dim`` Dirichlet Laplacian eigenvalues on (0,1), times ``scale``."""
        eig = tuple(-scale * (k * math.pi) ** 2 for k in range(1, dim + 1))
        return cls(eig, mu=eig[0], theta=theta, bound_C=bound_C, bound_M=bound_M)


def validate_model(model: SectorialSpectralModel, alpha) -> ValidationReport:
    rep = ValidationReport()
    a = float(alpha)
    if model.dim < 1:
        rep.issues.append("model has no eigenvalues")
    for k, e in enumerate(model.eigenvalues):
        if not e < 0:
            rep.issues.append(f"nonnegative eigenvalue {e} at index {k}")
        elif e > model.mu:
            rep.issues.append(f"eigenvalue {e} at index {k} lies above the sector type mu={model.mu}")
    if not model.mu < 0:
        rep.issues.append(f"sector type mu={model.mu} must be negative")
    if not (1.0 < a < 2.0):
        rep.issues.append(f"alpha={a} outside (1,2)")
    elif not (0.0 < model.theta < math.pi * (1.0 - a / 2.0)):
        rep.issues.append(
            f"angle theta={model.theta} must lie in (0, pi(1-alpha/2)) = (0, {math.pi * (1 - a / 2):.6g})")
    if not model.bound_C > 0:
        rep.issues.append("bound_C must be positive")
    if not model.bound_M > 0:
        rep.issues.append("bound_M must be positive")
    return rep


def require_valid(model: SectorialSpectralModel, alpha) -> None:
    rep = validate_model(model, alpha)
    if not rep.ok:
        raise ValueError("invalid spectral model: " + "; ".join(rep.issues))


def solution_operator_diagonal(model: SectorialSpectralModel, alpha, t,
                               cfg: MLEvalConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Diagonal of S_alpha(t); shape ``t.shape + (dim,)``."""
    a = as_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    z = model.eig_array * (t[..., None] ** a)
    return ml_array(a, z, cfg)


def apply_solution_operator(model: SectorialSpectralModel, alpha, t: float, v,
                            cfg: MLEvalConfig = DEFAULT_CONFIG) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != model.dim:
        raise ValueError(f"state vector length {v.shape[-1]} != model dim {model.dim}")
    return solution_operator_diagonal(model, alpha, t, cfg) * v


def kernel_table(model: SectorialSpectralModel, alpha, h: float, n_nodes: int,
                 cfg: MLEvalConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``K[lag, k] = E_alpha(mu_k (lag h)**alpha)`` for lag = 0..n_nodes-1."""
    return solution_operator_diagonal(model, alpha, np.arange(n_nodes) * h, cfg)


def fit_bound_constant(model: SectorialSpectralModel, alpha, t_grid,
                       cfg: MLEvalConfig = DEFAULT_CONFIG) -> float:
    """Smallest C with ||S_alpha(t)|| <= C M / (1 + |mu| t**alpha) on ``t_grid``."""
    a = as_alpha(alpha)
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("t_grid must be nonempty")
    norms = np.abs(solution_operator_diagonal(model, a, t, cfg)).max(axis=-1)
    return float(np.max(norms * (1.0 + abs(model.mu) * t ** a)) / model.bound_M)
