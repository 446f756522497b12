"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 3] [--n 2000]

Each kernel is run once per backend before timing so JIT compilation is excluded.
"""
import argparse
import time

import numpy as np

from mtpoison import _kernels
from mtpoison.data import make_two_gaussians
from mtpoison.model import LinearModel, TrainConfig, fit


def _best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n):
    data = make_two_gaussians(n, seed=1)
    cfg = TrainConfig(c_r=0.01)
    rng = np.random.default_rng(0)
    t, p = LinearModel(rng.normal(size=2), 0.3), LinearModel(rng.normal(size=2), -0.2)
    starts = data.domain.sample(rng, 10)

    def ascent(kind):
        return lambda: _kernels.adam_ascent(kind, t.weights, t.bias, p.weights, p.bias, 1.0, starts,
                                            data.domain.lo, data.domain.hi, 1000, 0.01)

    return {
        "hinge dual, bias (SMO)": lambda: fit("hinge", data.X, data.y, cfg, use_bias=True),
        "hinge dual, no bias (DCD)": lambda: fit("hinge", data.X, data.y, cfg, use_bias=False),
        "adam ascent, hinge": ascent(_kernels.HINGE),
        "adam ascent, logistic": ascent(_kernels.LOGISTIC),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=2000)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':28s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, fn in cases(args.n).items():
        with _kernels.use_numba(True):
            t_nb = _best_of(fn, args.repeat)
        with _kernels.use_numba(False):
            t_np = _best_of(fn, args.repeat)
        print(f"{name:28s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
