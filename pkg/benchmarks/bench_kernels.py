"""Time the numba kernels against their numpy/scipy twins.

    python3 benchmarks/bench_kernels.py [--M 4000] [--repeat 20]

Each pair is checked for agreement before timing. The first numba call
(compilation) is excluded. Set HSSELFSIM_DISABLE_NUMBA=1 to see the
uncompiled fallback of the ``_nb`` variants instead.
"""

import argparse
import time

import numpy as np

from hsselfsim import kernels as kn
from hsselfsim._accel import backend
from hsselfsim.core import make_grid


def best_of(fn, args, repeat):
    fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(M):
    g = make_grid(3, 16.0, M, 2.0)
    r = np.asarray(g.nodes)
    f = np.exp(-r ** 2 / 8)
    lw = np.asarray(g.log_weights) + r ** 2 / 4
    lower = np.full(M, -1.0)
    upper = np.full(M, -1.0)
    diag = np.full(M, 4.0)
    sub = np.r_[0.0, np.full(M - 1, 3.0)]
    sup = np.r_[np.full(M - 1, 3.0), 0.0]
    r_out = np.linspace(1e-6, 8.0, 400)
    return {
        "first_derivative": (f, r),
        "second_derivative": (f, r),
        "log_weighted_sum": (lw, f, f),
        "tridiag_solve": (lower, diag, upper, f),
        "imex_cn_step": (sub, sup, f, 0.1 * f, 1e-3),
        "shoot_dp45": (3, 0.5, 3.0, 0.75, 3.0, 1e-6, r_out, 1e-10, 1e-14, 1e8),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"backend={backend()} M={args.M} repeat={args.repeat}")
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, a in cases(args.M).items():
        nb = getattr(kn, name + "_nb")
        npf = getattr(kn, name + "_np")
        x, y = nb(*a), npf(*a)
        if isinstance(x, tuple):
            x, y = x[0], y[0]
        diff = float(np.max(np.abs(np.asarray(x) - np.asarray(y))))
        t_nb = best_of(nb, a, args.repeat)
        t_np = best_of(npf, a, args.repeat)
        print(f"{name:<20}{t_nb:12.3e}{t_np:12.3e}{t_np / t_nb:10.2f}{diff:12.2e}")


if __name__ == "__main__":
    main()
