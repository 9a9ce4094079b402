"""Compare the numba and numpy interpolation kernels.

Times plain sparse-grid interpolation, vectorized DDSG evaluation and its
gradient on both backends and prints one row per case. The numba rows are
skipped when numba is not installed. ``DDSG_DISABLE_NUMBA=1`` switches the
default backend of the library; this script always selects the backend
explicitly, so it measures both either way.

Usage::

    python benchmarks/bench_kernels.py [--points 20000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from ddsg import _kernels, hdmr
from ddsg import sparse_grid as sg
from ddsg import testfunctions as tf


def best_time(fn, repeats):
    fn()  # compile or warm caches
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(points, seed):
    rng = np.random.default_rng(seed)
    g = sg.build(tf.smooth_bump, 2, 8, 0.0, sg.ZERO_BOUNDARY)
    X2 = rng.random((points, 2))
    yield f"sg d=2 level=8 ({g.num_points} pts)", lambda b: g.interpolate(X2, backend=b)

    d = 8
    f = tf.product_peak(d)
    D = hdmr.decompose(f, d, 2, anchor=hdmr.center_anchor(f, d), level=4, eps_gamma=0.0)
    v = D.vectorized
    X8 = rng.random((points, d))
    yield f"ddsg d=8 k_max=2 level=4 ({D.num_points()} pts)", lambda b: v.evaluate_batch(X8, b)
    wrt = np.arange(d)
    yield "ddsg gradient d=8 k_max=2 level=4", lambda b: v.evaluate_batch_grad(X8, wrt, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"default backend: {_kernels.backend_name()}  points: {args.points}")
    print(f"{'case':<42} {'backend':<8} {'seconds':>10} {'Mpts/s':>8} {'vs numpy':>9}")
    for name, run in cases(args.points, args.seed):
        ref = run("numpy")
        base = None
        for b in backends:
            out = run(b)
            ref_out = ref[0] if isinstance(ref, tuple) else ref
            new_out = out[0] if isinstance(out, tuple) else out
            if not np.allclose(new_out, ref_out, rtol=0, atol=1e-12):
                raise SystemExit(f"{name}: backends disagree")
            t = best_time(lambda: run(b), args.repeats)
            base = base or t
            print(f"{name:<42} {b:<8} {t:>10.4f} {args.points / t / 1e6:>8.2f} {base / t:>8.2f}x")


if __name__ == "__main__":
    main()
