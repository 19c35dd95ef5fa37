"""Compare the compiled moment kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--entries 20000] [--rank 10] [--repeat 5]

Builds a random stacked-row problem shaped like a 16x16 window of 20 slices
at the given observed-entry count, checks that both backends agree and
prints the best-of-``repeat`` wall time of each kernel.
"""

import argparse
import timeit

import numpy as np

from streamcp import _kernels_py

try:
    from streamcp import _kernels
except ImportError:
    _kernels = None


def make_problem(entries, rank, dims=(16, 16, 20), seed=0):
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
    rows = np.stack([rng.integers(0, d, entries) + o for d, o in zip(dims, offsets)], axis=1).astype(np.int64)
    total = sum(dims)
    means = rng.standard_normal((total, rank))
    a = rng.standard_normal((total, rank, rank)) * 0.1
    seconds = means[:, :, None] * means[:, None, :] + a @ a.transpose(0, 2, 1)
    weights = rng.uniform(0.5, 1.0, entries)
    targets = rng.standard_normal(entries)
    return rows, means, seconds, weights, targets, dims


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--entries", type=int, default=20000)
    parser.add_argument("--rank", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rows, means, seconds, weights, targets, dims = make_problem(args.entries, args.rank)
    backends = {"python": _kernels_py}
    if _kernels is not None:
        backends["compiled"] = _kernels
    else:
        print("compiled extension not built; timing the numpy fallback only")

    calls = {
        "accumulate_gram": lambda m: m.accumulate_gram(rows, 0, weights, targets, means, seconds, dims[0], 0),
        "entry_moments": lambda m: m.entry_moments(rows, means, seconds),
    }
    print(f"entries={args.entries} rank={args.rank} repeat={args.repeat}")
    for name, call in calls.items():
        results = {b: call(m) for b, m in backends.items()}
        if len(results) == 2:
            for x, y in zip(results["python"], results["compiled"]):
                np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-10)
        times = {
            b: min(timeit.repeat(lambda m=m: call(m), number=1, repeat=args.repeat)) for b, m in backends.items()
        }
        line = "  ".join(f"{b} {t * 1e3:8.2f} ms" for b, t in times.items())
        if len(times) == 2:
            line += f"  speedup {times['python'] / times['compiled']:.1f}x"
        print(f"{name:16s} {line}")


if __name__ == "__main__":
    main()
