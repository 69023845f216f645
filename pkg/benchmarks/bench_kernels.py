"""Numba vs numpy timings for the mixture kernels, plus an end-to-end run.

    python benchmarks/bench_kernels.py [--repeat 200]

The end-to-end part runs one direct reconstruction in a subprocess per
backend, since the backend is fixed at import time by INVLAB_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from invlab import _kernels

SHAPES = [(256, 4, 2), (256, 4, 9), (1024, 8, 2), (4096, 16, 9)]  # (cells, components, rows)

E2E = """
import time
from invlab import Condition, CorrectionConfig, default_schedule, invert, reconstruct, _kernels
from invlab.bench import generate_suite
s = default_schedule(50)
sc = generate_suite(1, 0)[0]
null = Condition.null(sc.model.K)
tr = invert(sc.z0, sc.c_src, null, 1.0, sc.model, s)
reconstruct(tr, sc.c_src, null, 7.5, CorrectionConfig("direct"), sc.model, s)
t0 = time.perf_counter()
for _ in range(20):
    reconstruct(tr, sc.c_src, null, 7.5, CorrectionConfig("direct"), sc.model, s)
print(_kernels.BACKEND, (time.perf_counter() - t0) / 20 * 1e3)
"""


def inputs(n, k, m, rng):
    z = rng.standard_normal(n)
    means = rng.standard_normal((k, n)) * 2.0
    sigma2 = rng.uniform(0.5, 1.5, k)
    logw = np.log(rng.dirichlet(np.ones(k), size=m))
    return z, means, sigma2, logw


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    print(f"{'N':>6}{'K':>4}{'M':>4}{'numpy us':>11}{'numba us':>11}{'speedup':>9}{'max|diff|':>12}")
    for n, k, m in SHAPES:
        args = inputs(n, k, m, rng) + (0.37,)
        t_np = min(timeit.repeat(lambda: _kernels.mixture_eps_numpy(*args), number=repeat, repeat=3)) / repeat
        if not _kernels.HAS_NUMBA:
            print(f"{n:>6}{k:>4}{m:>4}{t_np * 1e6:>11.1f}{'n/a':>11}")
            continue
        _kernels.mixture_eps_numba(*args)  # compile outside the timing
        t_nb = min(timeit.repeat(lambda: _kernels.mixture_eps_numba(*args), number=repeat, repeat=3)) / repeat
        diff = np.abs(_kernels.mixture_eps_numpy(*args)[0] - _kernels.mixture_eps_numba(*args)[0]).max()
        print(f"{n:>6}{k:>4}{m:>4}{t_np * 1e6:>11.1f}{t_nb * 1e6:>11.1f}{t_np / t_nb:>9.2f}{diff:>12.2e}")


def end_to_end():
    for flag in ("0", "1"):
        env = dict(os.environ, INVLAB_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        backend, ms = out.stdout.split()
        print(f"reconstruct (T=50, 16x16, K=4) backend={backend:<6} {float(ms):8.2f} ms")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    a = ap.parse_args()
    kernel_table(a.repeat)
    end_to_end()
