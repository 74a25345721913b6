"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from pertinf import _accel


def cases(gen):
    s = gen.standard_normal((200_000, 6))
    p = 30
    ginv = np.linalg.inv(np.eye(p) + 0.1 * np.ones((p, p)))
    gam = gen.standard_normal((p, p, p))
    v = gen.standard_normal(p)
    a = gen.standard_normal((p, p))
    hs = gen.standard_normal((5_000, p))
    return {
        "score_moments (200000 x 6)": ("score_moments", (s, True)),
        "connection_accel (p=30)": ("connection_accel", (ginv, gam, v)),
        "rayleigh_batch (5000 x 30)": ("rayleigh_batch", (a + a.T, 2.0 * np.eye(p), hs)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = {"numpy": _accel.numpy_impl}
    if _accel.numba_impl:
        impls["numba"] = _accel.numba_impl
    print(f"{'kernel':<30}" + "".join(f"{k:>12}" for k in impls) + "   (best of repeats, ms)")
    for label, (name, argv) in cases(np.random.default_rng(0)).items():
        times = []
        for impl in impls.values():
            fn = impl[name]
            fn(*argv)  # compile / warm up
            times.append(min(timeit.repeat(lambda: fn(*argv), number=1, repeat=args.repeat)) * 1e3)
        print(f"{label:<30}" + "".join(f"{t:>12.3f}" for t in times))


if __name__ == "__main__":
    main()
