"""Time the reachability probe kernels under both backends.

    python3 benchmarks/bench_probe.py --samples 200000 --repeat 5
"""
import argparse
import time

import numpy as np

from dtctrl import kernels
from dtctrl.oracle import EndpointMap, ReachProbe, probe_interior
from dtctrl.system import builtin


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sys_ = builtin("example-r3")
    x0 = np.array([-0.25, 0.0, -0.5])
    ubar = np.ones(4)
    F = EndpointMap(sys_, x0, 4)
    rng = np.random.default_rng(args.seed)
    W = ubar + 0.05 * (2 * rng.random((args.samples, 4)) - 1)
    D = ReachProbe().directions(3)

    backends = [kernels.NUMPY] + ([kernels.NUMBA] if kernels.numba_available() else [])
    ref = None
    print(f"{'backend':8s} {'rollout [s]':>12s} {'extrema [s]':>12s} {'probe [s]':>10s}")
    for b in backends:
        # warm-up compiles the numba kernels
        ends = kernels.batch_endpoint(sys_, x0, W[:10], 4, b)
        kernels.directional_extrema(ends, D, b)
        t_roll = best_of(lambda: kernels.batch_endpoint(sys_, x0, W, 4, b), args.repeat)
        ends = kernels.batch_endpoint(sys_, x0, W, 4, b)
        disp = ends - F(ubar)
        t_ext = best_of(lambda: kernels.directional_extrema(disp, D, b), args.repeat)
        probe = ReachProbe(samples=args.samples, seed=args.seed, backend=b)
        t_probe = best_of(lambda: probe_interior(F, ubar, probe), args.repeat)
        print(f"{b:8s} {t_roll:12.4f} {t_ext:12.4f} {t_probe:10.4f}")
        if ref is None:
            ref = ends
        else:
            print(f"max endpoint difference vs numpy: {np.max(np.abs(ends - ref)):.3g}")


if __name__ == "__main__":
    main()
