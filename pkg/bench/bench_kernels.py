"""Compare the compiled and numpy mixture kernels.

Times each kernel on random inputs for a few mixture sizes, then a short
end-to-end toy run per backend. Usage: ``python bench/bench_kernels.py``.
"""

import argparse
import timeit

import numpy as np

from gmmnls import _backend
from gmmnls.benchmarks.toy import ToySpec, run_toy_mc


def kernel_inputs(rng, K, d, n):
    la = rng.normal(size=K)
    la -= la.max()
    E = rng.normal(size=(K, d))
    Jc = rng.normal(size=(K, d, n))
    return la, np.ascontiguousarray(E), np.ascontiguousarray(Jc)


def time_kernels(backend, sizes, repeat, seed=0):
    _backend.set_backend(backend)
    k = _backend.kernels
    rows = []
    for K, d, n in sizes:
        la, E, Jc = kernel_inputs(np.random.default_rng(seed), K, d, n)
        calls = {
            "max_mixture": lambda: k.max_mixture(la, E, Jc),
            "sum_mixture": lambda: k.sum_mixture(la, E, Jc),
            "max_sum_mixture": lambda: k.max_sum_mixture(la, E, Jc, 1.0),
            "hessian_sum_mixture": lambda: k.hessian_sum_mixture(la, E, Jc),
        }
        for name, fn in calls.items():
            best = min(timeit.repeat(fn, number=repeat, repeat=5)) / repeat
            rows.append((backend, name, K, d, n, best * 1e6))
    return rows


def time_toy(backend, draws):
    _backend.set_backend(backend)
    spec = ToySpec(dim=2, n_param_draws=draws, n_inits=100, grid_resolution=101)
    return min(timeit.repeat(lambda: run_toy_mc(spec), number=1, repeat=3))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=2000)
    p.add_argument("--toy-draws", type=int, default=5)
    args = p.parse_args(argv)

    sizes = [(2, 1, 1), (2, 2, 2), (8, 3, 6), (44, 2, 3)]
    backends = _backend.available()
    print(f"{'backend':8} {'kernel':20} {'K':>3} {'d':>2} {'n':>2} {'us/call':>9}")
    timings = {}
    for b in backends:
        for row in time_kernels(b, sizes, args.repeat):
            timings[row[:2] + row[2:5]] = row[5]
            print(f"{row[0]:8} {row[1]:20} {row[2]:3d} {row[3]:2d} {row[4]:2d} {row[5]:9.2f}")
    if "cython" in backends:
        print("\nspeedup (python / cython):")
        for (b, name, K, d, n), t in timings.items():
            if b == "python":
                print(f"  {name:20} K={K:<3d} d={d} n={n} {t / timings[('cython', name, K, d, n)]:6.2f}x")
    print(f"\nend-to-end toy 2D, {args.toy_draws} draws x 100 inits x 4 methods:")
    for b in backends:
        print(f"  {b:8} {time_toy(b, args.toy_draws):7.2f} s")


if __name__ == "__main__":
    main()
