"""Time the compiled kernels against the numpy reference.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--sizes 64 256]
"""
import argparse
import timeit

import numpy as np

from srkd import _pykernels

try:
    from srkd import _ckernels
except ImportError:
    _ckernels = None


def cases(n, rng):
    z = rng.normal(size=(n, n)) * 10
    p = _pykernels.softmax_rows(rng.normal(size=(n, n)))
    x = rng.normal(size=(4 * n, 16))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    labels = np.arange(4 * n) % 8
    return {
        "xent_rows": lambda k: k.xent_rows(z, p, 1.0, -1.6),
        "neg_entropy_rows": lambda k: k.neg_entropy_rows(z),
        "softmax_rows": lambda k: k.softmax_rows(z),
        "silhouette_samples": lambda k: k.silhouette_samples(x, labels, 8),
        "gaussian_potential_sum": lambda k: k.gaussian_potential_sum(x, 2.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256])
    args = ap.parse_args()
    backends = [_pykernels] + ([_ckernels] if _ckernels else [])
    if _ckernels is None:
        print("compiled kernels unavailable; timing the numpy reference only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'n':>6}" + "".join(f"{b.NAME + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for n in args.sizes:
        for name, fn in cases(n, rng).items():
            times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3 for b in backends]
            speed = f"{times[0] / times[1]:>9.1f}x" if len(times) == 2 else ""
            print(f"{name:<24}{n:>6}" + "".join(f"{t:>14.3f}" for t in times) + speed)


if __name__ == "__main__":
    main()
