"""Time the compiled kernels against the interpreted fallbacks.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is checked for
agreement before timing; the compiled column reads "n/a" when the extension
was not built.
"""
import argparse
import timeit

import numpy as np

from odmn import _pykernels

try:
    from odmn import _ckernels
except ImportError:
    _ckernels = None


def scatter_case(rng, n_rows, vocab, dim):
    ids = rng.integers(0, vocab, n_rows).astype(np.int64)
    grad = rng.normal(size=(n_rows, dim))

    def run(impl):
        out = np.zeros((vocab, dim))
        impl.scatter_add_rows(out, ids, grad)
        return out
    return run


def area_case(rng, n):
    x = np.sort(np.concatenate([[0.0, 1.0], rng.random(n - 2)]))
    d = rng.normal(size=n)

    def run(impl):
        return impl.abs_area(x, d)
    return run


def bench(run, repeat):
    if _ckernels is not None:
        assert np.allclose(run(_pykernels), run(_ckernels), rtol=1e-12, atol=1e-12)
    py = min(timeit.repeat(lambda: run(_pykernels), number=1, repeat=repeat))
    c = min(timeit.repeat(lambda: run(_ckernels), number=1, repeat=repeat)) if _ckernels is not None else None
    return py, c


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    cases = [
        ("scatter_add_rows 512x8 into 16 ids", scatter_case(rng, 512, 16, 8)),
        ("scatter_add_rows 50k x8 into 5k ids", scatter_case(rng, 50_000, 5_000, 8)),
        ("abs_area 1k points", area_case(rng, 1_000)),
        ("abs_area 100k points", area_case(rng, 100_000)),
    ]
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, run in cases:
        py, c = bench(run, args.repeat)
        if c is None:
            print(f"{name:40s} {py * 1e3:10.3f} {'n/a':>10s} {'n/a':>8s}")
        else:
            print(f"{name:40s} {py * 1e3:10.3f} {c * 1e3:10.3f} {py / c:7.1f}x")


if __name__ == "__main__":
    main()
