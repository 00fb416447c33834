"""Benchmark: compiled evaluation kernels vs the numpy reference.

The scattered-point field evaluation dominates the Monte-Carlo tasks
(dataset simulation, likelihood ratios, influence functions); this script
times both implementations on representative sizes.

Run:  python benchmarks/bench_eval.py
"""

import time

import numpy as np

from pdefisher._kernels import reference

try:
    from pdefisher._kernels import _fast
except ImportError:
    _fast = None


def make_problem(rng, d, nm, m, nq):
    nodes = np.linspace(0.0, 1.0, m + 1)
    snaps = rng.standard_normal((m + 1, nm))
    kvecs = rng.integers(-8, 9, size=(nm, d)).astype(np.int64)
    kind = rng.integers(0, 3, size=nm).astype(np.int8)
    tq = rng.uniform(0, 1, nq)
    xq = rng.uniform(0, 1, (nq, d))
    return nodes, snaps, kvecs, kind, tq, xq


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = [
        ("d=1 LAN-replicate (nm=19, 5k pts)", 1, 19, 256, 5_000),
        ("d=1 influence batch (nm=65, 100k pts)", 1, 65, 256, 100_000),
        ("d=2 scalar (nm=289, 20k pts)", 2, 289, 128, 20_000),
    ]
    print(f"{'case':45s} {'reference':>12s} {'compiled':>12s} {'speedup':>9s}")
    for name, d, nm, m, nq in cases:
        args = make_problem(rng, d, nm, m, nq)
        t_ref = timeit(reference.eval_scalar, *args)
        if _fast is None:
            print(f"{name:45s} {t_ref*1e3:10.2f}ms {'n/a':>12s}")
            continue
        t_fast = timeit(_fast.eval_scalar, *args)
        a = reference.eval_scalar(*args)
        b = _fast.eval_scalar(*args)
        assert np.allclose(a, b, atol=1e-12), "parity violated"
        print(
            f"{name:45s} {t_ref*1e3:10.2f}ms {t_fast*1e3:10.2f}ms {t_ref/t_fast:8.1f}x"
        )
    if _fast is None:
        print("\ncompiled extension not built; install with `pip install -e .`")


if __name__ == "__main__":
    main()
