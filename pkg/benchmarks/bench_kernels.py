"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--no-end-to-end]

Each kernel is called on representative inputs through both backends and the
best of ``--repeat`` timings is reported. The end-to-end row runs a short
Lorenz'96 constant-radius experiment in a fresh interpreter, once with the
default backend and once with ``ADALOC_PURE_PYTHON=1``.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from adaloc import _backend
from adaloc.localization import mean_code
from adaloc.models import QGConfig, QuasiGeostrophic


def kernel_cases(rng):
    """(name, args) pairs sized like the calls made during a desk-scale run."""
    a, b = rng.uniform(0.5, 8.0, (2, 40 * 40))
    dist = np.ascontiguousarray(rng.uniform(0, 20, (40, 30)))
    x0 = np.ascontiguousarray(8 + rng.standard_normal((40, 10)))
    G = 33
    psi, q = (np.ascontiguousarray(rng.standard_normal((G, G, 25))) for _ in range(2))
    n, m, N = 40, 30, 10
    X = rng.standard_normal((n, N))
    X -= X.mean(axis=1, keepdims=True)
    obs = np.arange(10, 40, dtype=np.int64)
    Y = X[obs]
    i = np.arange(n)
    ring = np.minimum(np.abs(i[:, None] - i[None, :]), n - np.abs(i[:, None] - i[None, :])).astype(float)
    batch = (rng.standard_normal(n), np.ascontiguousarray(X @ Y.T / (N - 1)),
             np.ascontiguousarray(Y @ Y.T / (N - 1)), rng.standard_normal(m), np.ones(m),
             np.ascontiguousarray(ring[:, obs]), np.ascontiguousarray(ring[np.ix_(obs, obs)]), obs,
             np.ascontiguousarray(np.repeat(np.arange(1, 33)[:, None] * 0.5, n, axis=1)),
             mean_code("mean"), rng.standard_normal(n))
    h = QuasiGeostrophic(QGConfig(grid=G)).h
    return [
        ("combine_array", (mean_code("rms"), a, b)),
        ("rho_block", (dist, rng.uniform(1, 8, 40), rng.uniform(1, 8, 30), mean_code("mean"))),
        ("l96_advance", (x0, 0.0, 0.01, 5, 8.0, 4.0, 2 * np.pi, 4)),
        ("arakawa_jacobian", (psi, q, h)),
        ("analysis_rmse_batch", batch),
    ]


def best_time(fn, args, repeat):
    number = 1
    while True:  # grow the loop count until one measurement takes ~20 ms
        t = timeit.timeit(lambda: fn(*args), number=number)
        if t > 0.02 or number > 1 << 16:
            break
        number *= 4
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


END_TO_END = """
import time
from adaloc import BACKEND
from adaloc.harness.config import loads
from adaloc.harness.experiment import run_experiment
cfg = loads('[observations]\\npattern = "sparse30"\\n[filter]\\ncycles = 300\\nspinup = 50\\n')
t = time.perf_counter()
run_experiment(cfg)
print(BACKEND, time.perf_counter() - t)
"""


def end_to_end(pure: bool) -> float:
    env = dict(os.environ)
    env.pop("ADALOC_PURE_PYTHON", None)
    if pure:
        env["ADALOC_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.split()[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    if not _backend.compiled_available():
        print("compiled kernels are not built; only the numpy fallback can be timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<22}{'compiled (us)':>15}{'python (us)':>15}{'speedup':>10}")
    for name, kargs in kernel_cases(rng):
        tp = best_time(_backend.get(name, "python"), kargs, args.repeat)
        if _backend.compiled_available():
            tc = best_time(_backend.get(name, "compiled"), kargs, args.repeat)
            print(f"{name:<22}{tc * 1e6:>15.1f}{tp * 1e6:>15.1f}{tp / tc:>9.1f}x")
        else:
            print(f"{name:<22}{'-':>15}{tp * 1e6:>15.1f}{'-':>10}")
    if not args.no_end_to_end:
        tp = end_to_end(pure=True)
        if _backend.compiled_available():
            tc = end_to_end(pure=False)
            print(f"{'L96 run, 300 cycles':<22}{tc:>14.2f}s{tp:>14.2f}s{tp / tc:>9.1f}x")
        else:
            print(f"{'L96 run, 300 cycles':<22}{'-':>15}{tp:>14.2f}s{'-':>10}")


if __name__ == "__main__":
    main()
