"""Experiment configuration: a line-oriented ``section.key = value`` file.

Grammar
-------
* one assignment per line: ``section.key = value``
* ``#`` starts a comment; blank lines are ignored
* lists are comma separated (``model.eigenvalues = -1, -4``)
* booleans are ``true`` / ``false``; ``auto`` selects a derived default
* every key is optional; unknown keys are errors

See ``SCHEMA`` for the keys, their types and defaults.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from fraclevy.coefficients import REGISTRY, CoefficientSet, make_coefficients
from fraclevy.levy_noise import (
    FiniteActivity,
    InfiniteActivity,
    LargeJumps,
    LevyMeasureSpec,
    QWienerSpec,
    RadialMarks,
)
from fraclevy.mild_solver import SimGrid
from fraclevy.special_fn import FractionalOrder, MLEvalConfig
from fraclevy.spectral_model import SectorialSpectralModel, fit_bound_constant, validate_model

AUTO = "auto"


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists one message per offending key."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# key -> (kind, default). kinds: float, int, bool, str, floats, float|auto, floats|auto, int|auto
SCHEMA: dict[str, tuple[str, object]] = {
    "model.eigenvalues": ("floats", (-1.0,)),
    "model.mu": ("float", -1.0),
    "model.theta": ("float", 0.3),
    "model.C": ("float|auto", AUTO),
    "model.M": ("float", 1.0),
    "order.alpha": ("float", 1.5),
    "noise.q_eigs": ("floats", (1.0,)),
    "noise.levy": ("str", "finite"),
    "noise.small_rate": ("float", 1.0),
    "noise.small_r_min": ("float", 0.0),
    "noise.small_r_max": ("float", 1.0),
    "noise.scale": ("float", 1.0),
    "noise.exponent": ("float", 1.5),
    "noise.epsilon": ("float", 0.1),
    "noise.b": ("float", 0.5),
    "noise.large_r_min": ("float", 1.0),
    "noise.large_r_max": ("float", 2.0),
    "noise.symmetric": ("bool", False),
    "coefficients.name": ("str", "linear"),
    "coefficients.L": ("float", 0.01),
    "coefficients.omega": ("float", 1.0),
    "coefficients.amplitude": ("float", 1.0),
    "coefficients.decay_rate": ("float", 0.5),
    "coefficients.sigma": ("float|auto", AUTO),
    "grid.T": ("float", 5.0),
    "grid.m": ("float", 50.0),
    "run.n_paths": ("float", 100.0),
    "run.master_seed": ("int", 0),
    "run.c0": ("floats", (1.0,)),
    "run.noise_m": ("int|auto", AUTO),
    "run.picard_tol": ("float", 1e-8),
    "run.picard_max_iter": ("int", 50),
    "run.safety_factor": ("float", 10.0),
    "run.write_paths": ("bool", True),
    "ml.series_cutoff_radius": ("float", 5.0),
    "ml.max_terms": ("int", 400),
    "ml.target_abs_tol": ("float", 1e-10),
    "ml_eval.alpha": ("floats", (1.5,)),
    "ml_eval.z": ("floats", (-0.5, -1.0, -2.0, -5.0, -10.0)),
    "analysis.input": ("str", "simulate"),
    "analysis.eval_times": ("floats|auto", AUTO),
    "analysis.eval_spacing": ("float", 0.25),
    "analysis.window": ("floats|auto", AUTO),
    "analysis.threshold": ("float", 1e-2),
    "analysis.confidence_z": ("float", 3.0),
    "analysis.normalize": ("bool", True),
    "analysis.T_tail": ("float|auto", AUTO),
    "analysis.constants": ("str", "paper"),
}

LEVY_CHOICES = ("finite", "infinite", "none")
ANALYSIS_INPUTS = ("simulate", "sine", "decay", "ramp")


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind.endswith("|auto") and raw.lower() == AUTO:
        return AUTO
    base = kind.split("|")[0]
    if base == "float":
        return float(raw)
    if base == "int":
        v = float(raw)
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    if base == "bool":
        low = raw.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return low == "true"
    if base == "floats":
        parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
        if not parts:
            raise ValueError("expected a nonempty comma-separated list")
        return tuple(float(p) for p in parts)
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **overrides) -> ExperimentConfig:
        """Overrides use dotted keys passed as a mapping, e.g. ``{"run.n_paths": 5}``."""
        vals = dict(self.values)
        for k, v in overrides.items():
            if k not in SCHEMA:
                raise ConfigError([f"unknown key {k!r}"])
            vals[k] = v
        cfg = ExperimentConfig(vals)
        cfg.validate()
        return cfg

    def canonical(self) -> str:
        return "".join(f"{k} = {_format_value(self.values[k])}\n" for k in sorted(self.values))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    # --- object builders --------------------------------------------------
    @property
    def alpha(self) -> float:
        return float(FractionalOrder(self["order.alpha"]))

    @property
    def omega(self) -> int:
        return int(self["coefficients.omega"])

    @property
    def n_paths(self) -> int:
        return int(self["run.n_paths"])

    @property
    def seed(self) -> int:
        return int(self["run.master_seed"])

    def ml_config(self) -> MLEvalConfig:
        return MLEvalConfig(self["ml.series_cutoff_radius"], self["ml.max_terms"], self["ml.target_abs_tol"])

    def model(self) -> SectorialSpectralModel:
        eig = tuple(self["model.eigenvalues"])
        base = SectorialSpectralModel(eig, self["model.mu"], self["model.theta"], 1.0, self["model.M"])
        C = self["model.C"]
        if C == AUTO:
            C = fit_bound_constant(base, self.alpha, np.logspace(-2, 3, 60), self.ml_config())
            C = max(C, 1.0)
        return SectorialSpectralModel(eig, self["model.mu"], self["model.theta"], float(C), self["model.M"])

    def qspec(self) -> QWienerSpec:
        return QWienerSpec(tuple(self["noise.q_eigs"]))

    def levy(self) -> LevyMeasureSpec:
        dim_U = len(self["noise.q_eigs"])
        sym = self["noise.symmetric"]
        kind = self["noise.levy"]
        if kind == "none":
            return LevyMeasureSpec.none(dim_U)
        large = LargeJumps(self["noise.b"], RadialMarks.uniform(self["noise.large_r_min"],
                                                                self["noise.large_r_max"], dim_U, sym))
        if kind == "finite":
            small = FiniteActivity(self["noise.small_rate"], RadialMarks.uniform(
                self["noise.small_r_min"], self["noise.small_r_max"], dim_U, sym))
        else:
            small = InfiniteActivity.power_law(self["noise.scale"], self["noise.exponent"],
                                               self["noise.epsilon"], dim_U, sym)
        return LevyMeasureSpec(small, large)

    def coefficients(self) -> CoefficientSet:
        params = {}
        if self["coefficients.sigma"] != AUTO:
            params["sigma"] = self["coefficients.sigma"]
        if self["coefficients.name"] in ("periodic", "additive"):
            params["amplitude"] = self["coefficients.amplitude"]
            params["decay_rate"] = self["coefficients.decay_rate"]
        return make_coefficients(self["coefficients.name"], len(self["model.eigenvalues"]),
                                 len(self["noise.q_eigs"]), self["coefficients.L"], self.omega,
                                 qspec=self.qspec(), levy=self.levy(), **params)

    def grid(self) -> SimGrid:
        return SimGrid(self["grid.T"], int(self["grid.m"]))

    def c0(self) -> np.ndarray:
        c0 = np.asarray(self["run.c0"], dtype=float)
        d = len(self["model.eigenvalues"])
        if c0.size == 1 and d > 1:
            c0 = np.full(d, c0[0])
        return c0

    def noise_m(self) -> int:
        v = self["run.noise_m"]
        return int(self["grid.m"]) if v == AUTO else int(v)

    def eval_times(self) -> tuple:
        v = self["analysis.eval_times"]
        if v != AUTO:
            return tuple(v)
        grid = self.grid()
        end = grid.n_steps * grid.h - self.omega
        m = grid.steps_per_unit
        stride = max(1, int(round(self["analysis.eval_spacing"] * m)))
        n = int(math.floor(end * m / stride + 1e-9))
        return tuple(k * stride / m for k in range(n + 1))

    def window(self) -> tuple:
        v = self["analysis.window"]
        if v == AUTO:
            T = self.grid().n_steps * self.grid().h
            return (T / 2.0, T - self.omega)
        return tuple(v)

    def t_tail(self) -> float:
        v = self["analysis.T_tail"]
        return self.grid().n_steps * self.grid().h / 2.0 if v == AUTO else float(v)

    # --- validation -------------------------------------------------------
    def validate(self) -> None:
        errors: list[str] = []

        def check(key, fn):
            try:
                fn()
            except (ValueError, TypeError, KeyError) as exc:
                msg = exc.args[0] if exc.args else str(exc)
                errors.append(f"{key}: {msg}")

        v = self.values
        check("order.alpha", lambda: FractionalOrder(v["order.alpha"]))

        def omega_ok():
            w = v["coefficients.omega"]
            if not float(w).is_integer() or w < 1:
                raise ValueError("omega must be a positive integer")
        check("coefficients.omega", omega_ok)

        def name_ok():
            if v["coefficients.name"] not in REGISTRY:
                raise ValueError(f"unknown coefficient set {v['coefficients.name']!r}; known: {sorted(REGISTRY)}")
        check("coefficients.name", name_ok)

        def levy_ok():
            if v["noise.levy"] not in LEVY_CHOICES:
                raise ValueError(f"must be one of {LEVY_CHOICES}")
        check("noise.levy", levy_ok)

        def input_ok():
            if v["analysis.input"] not in ANALYSIS_INPUTS:
                raise ValueError(f"must be one of {ANALYSIS_INPUTS}")
        check("analysis.input", input_ok)

        def constants_ok():
            if v["analysis.constants"] not in ("paper", "consistent"):
                raise ValueError("must be 'paper' or 'consistent'")
        check("analysis.constants", constants_ok)

        def paths_ok():
            n = v["run.n_paths"]
            if not float(n).is_integer() or n < 1:
                raise ValueError("n_paths must be a positive integer")
        check("run.n_paths", paths_ok)

        def m_ok():
            m = v["grid.m"]
            if not float(m).is_integer() or m < 1:
                raise ValueError("steps_per_unit m must be a positive integer")
        check("grid.m", m_ok)
        if errors:
            raise ConfigError(errors)

        check("grid", self.grid)
        check("noise.q_eigs", self.qspec)
        check("noise", self.levy)
        check("ml", self.ml_config)

        def model_ok():
            base = SectorialSpectralModel(tuple(v["model.eigenvalues"]), v["model.mu"], v["model.theta"],
                                          1.0, v["model.M"])
            rep = validate_model(base, self.alpha)
            if not rep.ok:
                raise ValueError("; ".join(rep.issues))
            C = v["model.C"]
            if C != AUTO and not C > 0:
                raise ValueError("C must be positive")
        check("model", model_ok)

        def c0_ok():
            c0 = np.asarray(v["run.c0"])
            d = len(v["model.eigenvalues"])
            if c0.size not in (1, d):
                raise ValueError(f"c0 must have 1 or {d} entries")
        check("run.c0", c0_ok)

        def noise_m_ok():
            nm = self.noise_m()
            if nm < 1 or nm % int(v["grid.m"]):
                raise ValueError("noise_m must be a positive multiple of grid.m")
        check("run.noise_m", noise_m_ok)

        def tol_ok():
            if not v["run.picard_tol"] > 0 or v["run.picard_max_iter"] < 3:
                raise ValueError("picard_tol must be positive and picard_max_iter >= 3")
        check("run.picard_tol", tol_ok)

        def analysis_ok():
            if not v["analysis.threshold"] > 0:
                raise ValueError("threshold must be positive")
            if not v["analysis.eval_spacing"] > 0:
                raise ValueError("eval_spacing must be positive")
            if v["analysis.window"] != AUTO and len(v["analysis.window"]) != 2:
                raise ValueError("window must be two times")
        check("analysis", analysis_ok)

        if not errors:
            check("coefficients", self.coefficients)
        if errors:
            raise ConfigError(errors)


def defaults() -> dict:
    return {k: d for k, (_, d) in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    values = defaults()
    errors = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        try:
            values[key] = _parse_value(SCHEMA[key][0], raw)
        except ValueError as exc:
            errors.append(f"{source}:{lineno}: {key}: {exc}")
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(values)
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))
