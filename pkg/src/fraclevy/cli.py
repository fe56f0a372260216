"""Batch runner: ``fraclevy <command> --config FILE [--out DIR] ...``.

Exit status: 0 success, 2 validation failure, 3 numerical failure,
4 verdict false under ``--assert-verdict``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from fraclevy import __version__, _backend
from fraclevy.config import ConfigError, ExperimentConfig, parse_config
from fraclevy.levy_noise import NonIntegrableError
from fraclevy.mild_solver import (
    TERMS,
    Ensemble,
    FrozenNoise,
    SimGrid,
    picard_solve,
    simulate_ensemble,
    verify_picard_envelope,
)
from fraclevy.sap_analysis import (
    TERM_SELECTORS,
    PeriodicityQuery,
    contraction_constant,
    floor_sampling_check,
    sap_verdict,
    square_mean_defect,
)
from fraclevy.special_fn import InternalConsistencyError, MLEvaluationError, ml

COMMANDS = ("ml-eval", "check-contraction", "simulate", "picard", "analyze")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_VERDICT = 0, 2, 3, 4


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def cmd_ml_eval(cfg: ExperimentConfig, out: Path, args) -> tuple[list, bool]:
    mlc = cfg.ml_config()
    rows = [(a, z, ml(a, z, mlc)) for a in cfg["ml_eval.alpha"] for z in cfg["ml_eval.z"]]
    write_csv(out / "ml_eval.csv", ["alpha", "z", "value"], rows)
    return ["ml_eval.csv"], True


def _contraction(cfg: ExperimentConfig, args):
    variant = "consistent" if args.consistent_constants else cfg["analysis.constants"]
    model = cfg.model()
    return contraction_constant(model.bound_C, model.bound_M, cfg.coefficients().lipschitz_L, cfg.alpha,
                                model.mu, cfg.levy().b, variant)


def cmd_check_contraction(cfg, out, args):
    r = _contraction(cfg, args)
    header = ["C", "M", "L", "alpha", "mu", "b", "C1", "C2", "C2_paper", "kappa_paper",
              "kappa_consistent", "variant", "kappa", "verdict", "proof_step_constant"]
    write_csv(out / "contraction.csv", header, [(r.C, r.M, r.L, r.alpha, r.mu, r.b, r.C1, r.C2, r.C2_paper,
                                                 r.kappa_paper, r.kappa_consistent, r.variant, r.kappa,
                                                 r.verdict, r.proof_step_constant)])
    print(f"kappa ({r.variant}) = {r.kappa:.6g}: {'contraction' if r.verdict else 'no contraction'}")
    return ["contraction.csv"], r.verdict


def _simulate(cfg: ExperimentConfig) -> Ensemble:
    grid = cfg.grid()
    noise = FrozenNoise.sample(cfg.qspec(), cfg.levy(), grid.horizon, cfg.noise_m(), cfg.n_paths, cfg.seed)
    return simulate_ensemble(cfg.model(), cfg.alpha, cfg.coefficients(), cfg.qspec(), cfg.levy(), grid,
                             cfg.c0(), noise=noise, cfg=cfg.ml_config(), keep_log=False)


def cmd_simulate(cfg, out, args):
    ens = _simulate(cfg)
    times = ens.grid.times
    files = []
    if cfg["run.write_paths"]:
        def rows():
            for p in range(len(ens)):
                for j, t in enumerate(times):
                    for k in range(ens.values.shape[2]):
                        yield (p, t, k, ens.values[p, j, k], *(ens.terms[n][p, j, k] for n in TERMS))
        write_csv(out / "paths.csv", ["path", "node_time", "coordinate", "value", *TERMS], rows())
        files.append("paths.csv")
    x = ens.values
    n = x.shape[0]
    mean = x.mean(axis=0)
    second = (x ** 2).mean(axis=0)
    se = x.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    write_csv(out / "summary.csv", ["node_time", "coordinate", "mean", "mean_stderr", "second_moment"],
              ((t, k, mean[j, k], se[j, k], second[j, k]) for j, t in enumerate(times)
               for k in range(x.shape[2])))
    files.append("summary.csv")
    return files, True


def cmd_picard(cfg, out, args):
    grid = cfg.grid()
    noise = FrozenNoise.sample(cfg.qspec(), cfg.levy(), grid.horizon, cfg.noise_m(), cfg.n_paths, cfg.seed)
    ens, rep = picard_solve(cfg.model(), cfg.alpha, cfg.coefficients(), cfg.levy(), noise, grid, cfg.c0(),
                            cfg["run.picard_tol"], cfg["run.picard_max_iter"], cfg.ml_config())
    env = verify_picard_envelope(rep, grid.n_steps * grid.h, cfg["run.safety_factor"])
    write_csv(out / "picard.csv", ["iteration", "sup_diff", "sup_diff_sq", "envelope_bound", "ratio"],
              ((n, d, d * d, b, r) for n, (d, b, r) in
               enumerate(zip(rep.iterates_sup_diff, env.bounds, env.ratios))))
    ok = rep.converged and env.ok
    write_csv(out / "picard_report.csv",
              ["converged", "iterations", "C_tilde", "C_tilde_measured", "C_tilde_used", "M_tilde", "c1", "c2",
               "c2_factor4", "envelope_ok", "verdict"],
              [(rep.converged, rep.iterations, rep.C_tilde, rep.C_tilde_measured, env.C_tilde_used, rep.M_tilde,
                rep.c1, rep.c2, rep.c2_factor4, env.ok, ok)])
    print(f"picard: converged={_fmt(rep.converged)} after {rep.iterations} iterations, "
          f"envelope={'ok' if env.ok else 'violated'}")
    return ["picard.csv", "picard_report.csv"], ok


def synthetic_ensemble(kind: str, grid: SimGrid, omega: int) -> Ensemble:
    """Deterministic single-path inputs with known defects."""
    t = grid.times
    if kind == "sine":
        v = np.sin(2 * np.pi * np.mod(t, omega) / omega)
    elif kind == "decay":
        v = np.exp(-t)
    elif kind == "ramp":
        v = t.copy()   # defect omega**2 at every t
    else:
        raise ValueError(f"unknown synthetic input {kind!r}")
    return Ensemble.from_values(grid, v[None, :])


def cmd_analyze(cfg, out, args):
    kind = cfg["analysis.input"]
    ens = _simulate(cfg) if kind == "simulate" else synthetic_ensemble(kind, cfg.grid(), cfg.omega)
    q = PeriodicityQuery(cfg.omega, cfg.eval_times(), confidence_z=cfg["analysis.confidence_z"])
    # synthetic inputs have known absolute defects, so only simulated ensembles are normalized
    norm = cfg["analysis.normalize"] and kind == "simulate"
    curves = {s: square_mean_defect(ens, q, s, normalize=norm and s == "full")
              for s in TERM_SELECTORS}
    write_csv(out / "defect.csv", ["term", "time", "estimate", "stderr", "n_paths", "normalizer"],
              ((s, t, e, se, c.n_paths, c.normalizer) for s, c in curves.items()
               for t, e, se in zip(c.times, c.estimates, c.stderr)))
    v = sap_verdict(curves["full"], cfg.window(), cfg["analysis.threshold"])
    fl = floor_sampling_check(ens, cfg.omega, cfg.t_tail(), confidence_z=cfg["analysis.confidence_z"])
    write_csv(out / "verdict.csv",
              ["passed", "terminal_value", "terminal_stderr", "threshold", "slope", "slope_stderr",
               "window_start", "window_end", "floor_check", "floor_sup", "full_sup"],
              [(v.passed, v.terminal_value, v.terminal_stderr, v.threshold, v.slope, v.slope_stderr,
                v.window[0], v.window[1], fl.passed, fl.floor_sup, fl.full_sup)])
    print(f"sap_verdict: {'pass' if v.passed else 'fail'} terminal={v.terminal_value:.6g} "
          f"slope={v.slope:.6g}+-{v.slope_stderr:.3g}")
    return ["defect.csv", "verdict.csv"], v.passed


HANDLERS = {
    "ml-eval": cmd_ml_eval,
    "check-contraction": cmd_check_contraction,
    "simulate": cmd_simulate,
    "picard": cmd_picard,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fraclevy", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment configuration file")
    p.add_argument("--out", default="runs", help="parent directory for run outputs")
    p.add_argument("--seed", type=int, help="override run.master_seed")
    p.add_argument("--paths", type=int, help="override run.n_paths")
    p.add_argument("--assert-verdict", action="store_true", help="exit 4 when the command's verdict is false")
    p.add_argument("--consistent-constants", action="store_true",
                   help="base the contraction verdict on the quadrature-consistent middle constant")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _write_manifest(run_dir: Path, header: dict, entry: dict) -> None:
    """Merge this command's entry into the run directory's manifest."""
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "manifest.json"
    manifest = {}
    if path.is_file():
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            manifest = {}
    manifest.update(header)
    manifest.setdefault("commands", {})[entry["command"]] = entry
    manifest["outputs"] = sorted({f for e in manifest["commands"].values() for f in e.get("outputs", [])})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _backend.apply_thread_cap()
    header = {"tool_version": __version__, "backend": _backend.NAME}
    manifest = {"command": args.command, "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "outputs": [], "errors": []}
    out_root = Path(args.out)
    try:
        cfg = parse_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["run.master_seed"] = args.seed
        if args.paths is not None:
            overrides["run.n_paths"] = args.paths
        if overrides:
            cfg = cfg.with_overrides(**overrides)
    except (ConfigError, OSError) as exc:
        errs = exc.errors if isinstance(exc, ConfigError) else [str(exc)]
        for e in errs:
            print(f"config error: {e}", file=sys.stderr)
        raw = Path(args.config).read_bytes() if os.path.isfile(args.config) else args.config.encode()
        digest = hashlib.sha256(raw).hexdigest()
        header["config_hash"] = digest
        manifest.update(status="validation_failure", errors=errs, exit_code=EXIT_VALIDATION)
        _write_manifest(out_root / f"invalid-{digest[:12]}", header, manifest)
        return EXIT_VALIDATION

    digest = cfg.hash()
    run_dir = out_root / digest[:12]
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.canonical(), encoding="utf-8")
    header.update(config_hash=digest, master_seed=cfg.seed, run_dir=str(run_dir))
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        files, verdict = HANDLERS[args.command](cfg, run_dir, args)
        manifest["outputs"] = ["config.txt", *files]
        manifest["verdict"] = bool(verdict)
        status = "ok"
        if args.assert_verdict and not verdict:
            code, status = EXIT_VERDICT, "verdict_false"
    except (ConfigError, ValueError, KeyError) as exc:
        code, status = EXIT_VALIDATION, "validation_failure"
        manifest["errors"].append(f"{type(exc).__name__}: {exc}")
    except (MLEvaluationError, NonIntegrableError, InternalConsistencyError, ArithmeticError,
            FloatingPointError) as exc:
        code, status = EXIT_NUMERICAL, "numerical_failure"
        manifest["errors"].append(f"{type(exc).__name__}: {exc}")
    manifest.update(wall_time_s=round(time.perf_counter() - t0, 6), status=status, exit_code=code)
    _write_manifest(run_dir, header, manifest)
    for e in manifest["errors"]:
        print(f"error: {e}", file=sys.stderr)
    print(f"{args.command}: {status} -> {run_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
