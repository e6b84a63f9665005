#!/usr/bin/env python3
"""Timing comparison of the compiled kernels against the NumPy fallback.

Run as ``python3 benchmarks/bench_kernels.py [--paths N] [--steps S]``.
Reports best-of-5 wall time per call for each hot kernel and the speedup
of the compiled implementation when it is available.
"""

import argparse
import importlib
import timeit

import numpy as np


def _load_backends():
    impls = {}
    try:
        impls["cython"] = importlib.import_module("liouville._kernels")
    except ImportError:
        pass
    impls["python"] = importlib.import_module("liouville._kernels_py")
    return impls


def bench_rho_cumsum(impl, n_visits):
    rng = np.random.default_rng(0)
    w = rng.gamma(1.5, size=(128, 128))
    ix = rng.integers(0, 128, size=n_visits)
    iy = rng.integers(0, 128, size=n_visits)
    out = np.empty(n_visits)
    return min(
        timeit.repeat(lambda: impl.rho_cumsum(w, ix, iy, out), number=20, repeat=5)
    ) / 20


def bench_exit_chunk(impl, n_paths, n_steps):
    rng = np.random.default_rng(1)
    w = rng.gamma(1.5, size=(128, 128))
    normals = rng.standard_normal((n_steps, n_paths, 2))

    def run():
        x = rng.random(n_paths)
        y = rng.random(n_paths)
        t = np.zeros(n_paths)
        f = np.zeros(n_paths)
        alive = np.ones(n_paths, dtype=np.uint8)
        out_t = np.zeros(n_paths)
        out_f = np.zeros(n_paths)
        impl.exit_chunk(
            x, y, t, f, alive, w, 1e-3, 1e-6, 0.5, 0.5, 0.01, normals, out_t, out_f
        )

    return min(timeit.repeat(run, number=3, repeat=5)) / 3


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--paths", type=int, default=1024, help="paths per chunk")
    parser.add_argument("--steps", type=int, default=256, help="steps per chunk")
    parser.add_argument("--visits", type=int, default=200_000, help="cells per path")
    args = parser.parse_args()

    impls = _load_backends()
    results = {}
    for name, impl in impls.items():
        results[name] = {
            "rho_cumsum": bench_rho_cumsum(impl, args.visits),
            "exit_chunk": bench_exit_chunk(impl, args.paths, args.steps),
        }

    print(f"{'kernel':<12} " + " ".join(f"{n:>12}" for n in results))
    for kernel in ("rho_cumsum", "exit_chunk"):
        row = [f"{results[n][kernel] * 1e3:9.3f} ms" for n in results]
        print(f"{kernel:<12} " + " ".join(f"{cell:>12}" for cell in row))
    if "cython" in results:
        for kernel in ("rho_cumsum", "exit_chunk"):
            ratio = results["python"][kernel] / results["cython"][kernel]
            print(f"{kernel}: compiled is {ratio:.1f}x faster")


if __name__ == "__main__":
    main()
