"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own subprocess because the choice is fixed at import
time by FRACLEVY_BACKEND.  Usage::

    python3 benchmarks/bench_backends.py [--paths 400] [--horizon 10] [--steps 32] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from fraclevy import _backend, kernels
from fraclevy.mild_solver import FrozenNoise, SimGrid, simulate_ensemble, picard_solve
from fraclevy.levy_noise import SeedSpec
sys.path.insert(0, sys.argv[2])
from helpers import ALPHA, linear_benchmark

args = json.loads(sys.argv[1])
P, T, m, rep = args["paths"], args["horizon"], args["steps"], args["repeat"]

def best(fn):
    fn()  # warm-up, includes JIT compilation
    out = []
    for _ in range(rep):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)

rng = np.random.default_rng(0)
n = int(T * m) + 1
K = rng.standard_normal((n, 1))
inc = rng.standard_normal((P, n, 1))

def scatter():
    acc = np.zeros((P, n, 1))
    for i in range(n - 1):
        kernels.scatter_forward(acc, K, np.ascontiguousarray(inc[:, i]), i)

model, q, levy, coeff = linear_benchmark(L=0.01)
grid = SimGrid(T, m)
noise = FrozenNoise.sample(q, levy, T, m, P, SeedSpec(1))
res = {
    "backend": _backend.NAME,
    "ml_series": best(lambda: kernels.ml_series(1.5, np.linspace(-5, 5, 20001), 200)),
    "scatter_forward": best(scatter),
    "causal_conv": best(lambda: kernels.causal_conv(K, inc)),
    "simulate_ensemble": best(lambda: simulate_ensemble(model, ALPHA, coeff, q, levy, grid, [1.0],
                                                        noise=noise, keep_log=False)),
    "picard_solve": best(lambda: picard_solve(model, ALPHA, coeff, levy, noise, grid, [1.0])),
}
print(json.dumps(res))
"""


def run(backend: str, args: argparse.Namespace) -> dict:
    env = dict(os.environ, FRACLEVY_BACKEND=backend, PYTHONWARNINGS="ignore")
    tests = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests")
    payload = json.dumps({"paths": args.paths, "horizon": args.horizon, "steps": args.steps,
                          "repeat": args.repeat})
    out = subprocess.run([sys.executable, "-c", WORKER, payload, tests], env=env,
                         capture_output=True, text=True)
    if out.returncode:
        sys.exit(f"{backend} worker failed:\n{out.stderr}")
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=400)
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--steps", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    results = [run(b, args) for b in ("numba", "numpy")]
    keys = [k for k in results[0] if k != "backend"]
    print(f"paths={args.paths} horizon={args.horizon} steps/unit={args.steps} (best of {args.repeat})")
    print(f"{'kernel':<20}{results[0]['backend']:>12}{results[1]['backend']:>12}{'speedup':>10}")
    for k in keys:
        a, b = results[0][k], results[1][k]
        print(f"{k:<20}{a:>11.4f}s{b:>11.4f}s{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
