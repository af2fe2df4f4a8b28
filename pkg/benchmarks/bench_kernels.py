"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]

Both backends are called by name, so the env flag does not matter here.
The numba column is measured after one warm-up call that pays for compilation.
"""
import argparse
import time

import numpy as np

from icnasim import kernels
from icnasim.sim import TICKS_PER_MS


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    u = rng.random(args.n)
    depart = np.sort(rng.integers(0, 400 * TICKS_PER_MS, args.n)).astype(np.int64)
    ms = TICKS_PER_MS
    dl = (200 * ms, 158 * ms, 160 * ms, 242 * ms, 14 * ms, 14 * ms, 7 * ms, 7 * ms, True,
          600 * ms)
    cases = [
        ("retransmission_attempts", lambda: kernels.retransmission_attempts_numba(u, 0.2),
         lambda: kernels.retransmission_attempts_numpy(u, 0.2)),
        ("classify_downlink", lambda: kernels.classify_downlink_numba(depart, *dl),
         lambda: kernels.classify_downlink_numpy(depart, *dl)),
    ]
    print(f"numba available: {kernels.HAVE_NUMBA}, n={args.n}, best of {args.repeat}")
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fast, slow in cases:
        a, b = fast(), slow()
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) \
            else np.array_equal(a, b)
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        tn, tp = _best(fast, args.repeat), _best(slow, args.repeat)
        print(f"{name:<26}{tn * 1e3:>10.2f}{tp * 1e3:>10.2f}{tp / tn:>8.1f}x")


if __name__ == "__main__":
    main()
