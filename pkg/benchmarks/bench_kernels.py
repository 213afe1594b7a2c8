"""Compare the compiled objective kernel with its numpy fallback.

Times ``bcm_cost_grad`` (value and gradient of the summed misclassification
probability) for several grid resolutions and horizons, checks that both
backends agree, and times one full ``solve_ocp`` under each backend.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np
from scipy.linalg import cholesky

from olahgp import _kernels_py

try:
    from olahgp import _kernels as _compiled
except ImportError:
    _compiled = None

SIGMA2, ELL, NOISE = 1.0, 600.0, 0.05


def problem(n_axis: int, N: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    axis = np.linspace(-2400.0, 2400.0, n_axis)
    G = n_axis * n_axis
    absdev = np.abs(rng.normal(0.0, 0.5, G))
    prec_d = np.ascontiguousarray(1.0 / rng.uniform(0.05, 1.0, G) - 1.0 / SIGMA2)
    R = rng.uniform(-2400.0, 2400.0, (N, 2))
    A = SIGMA2 * np.exp(-0.5 * ((R[:, None] - R[None]) ** 2).sum(-1) / ELL**2) + NOISE**2 * np.eye(N)
    return axis, absdev, prec_d, R, cholesky(A, lower=True)


def best_time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(repeat: int) -> list[dict]:
    rows = []
    for n_axis in (16, 32, 64):
        for N in (1, 5, 20):
            args = problem(n_axis, N)
            py = best_time(lambda: _kernels_py.bcm_cost_grad(*args, SIGMA2, ELL), repeat)
            row = {"res": n_axis, "N": N, "numpy_ms": 1e3 * py, "compiled_ms": None, "speedup": None,
                   "max_rel_diff": None}
            if _compiled is not None:
                cy = best_time(lambda: _compiled.bcm_cost_grad(*args, SIGMA2, ELL), repeat)
                v1, g1 = _kernels_py.bcm_cost_grad(*args, SIGMA2, ELL)
                v2, g2 = _compiled.bcm_cost_grad(*args, SIGMA2, ELL)
                diff = max(abs(v2 - v1) / abs(v1), float(np.max(np.abs(g2 - g1)) / max(np.max(np.abs(g1)), 1e-300)))
                row.update(compiled_ms=1e3 * cy, speedup=py / cy, max_rel_diff=diff)
            rows.append(row)
    return rows


_SOLVE = """
import time, numpy as np
from olahgp import kernels
from olahgp.gp_field import GridDomain, KernelParams, Measurement, PriorField, fit
from olahgp.objective import CostWeights
from olahgp.planner import PlannerConfig, solve_ocp
g = GridDomain(4800.0, 32, 128)
rng = np.random.default_rng(1)
a = g.axis("eval"); xx, yy = np.meshgrid(a, a)
prior = PriorField(g, np.maximum(2.0 + 0.8 * np.sin(xx / 1500) * np.cos(yy / 1300), 0.0))
data = [Measurement(tuple(rng.uniform(-2400, 2400, 2)), float(rng.normal(2, 0.5)), 0.05) for _ in range(10)]
m = fit(prior, KernelParams(1.0, 600.0), data)
t = time.perf_counter()
p = solve_ocp(m, PlannerConfig(5, 6160.0, g), CostWeights(2.0), (0.0, 0.0))
print(kernels.BACKEND, time.perf_counter() - t, p.objective)
"""


def solve_rows() -> list[dict]:
    rows = []
    for backend in ("python", "cython"):
        env = dict(os.environ, OLAHGP_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", _SOLVE], env=env, capture_output=True, text=True, check=True)
        used, secs, obj = out.stdout.split()
        rows.append({"requested": backend, "backend": used, "solve_s": float(secs), "objective": float(obj)})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20, help="timing repeats; the best is reported")
    ap.add_argument("--json", metavar="PATH", help="also write the results as JSON")
    args = ap.parse_args(argv)

    if _compiled is None:
        print("compiled extension not built; timing the numpy fallback only")
    rows = kernel_rows(args.repeat)
    print(f"{'res':>4} {'N':>3} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8} {'max rel diff':>13}")
    for r in rows:
        cm = "-" if r["compiled_ms"] is None else f"{r['compiled_ms']:.3f}"
        sp = "-" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        df = "-" if r["max_rel_diff"] is None else f"{r['max_rel_diff']:.1e}"
        print(f"{r['res']:>4} {r['N']:>3} {r['numpy_ms']:>10.3f} {cm:>12} {sp:>8} {df:>13}")

    solves = solve_rows()
    print("\nsolve_ocp, N = 5, RES = 32")
    for s in solves:
        print(f"  {s['backend']:>7}: {s['solve_s']:.3f} s, objective {s['objective']:.6f}")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernel": rows, "solve": solves}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
