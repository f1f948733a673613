"""Wall-clock comparison of the numba and numpy implementations of each hot kernel.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]

Both implementations are called directly (independent of ARTIFACT_NUMBA), so
a single run shows the speed-up and the maximum deviation between the two.
The first numba call (compilation or cache load) is timed separately.
"""
import argparse
import time

import numpy as np

from relcollapse import _kernels as K
from relcollapse._backend import HAVE_NUMBA
from relcollapse.core import QuadratureConfig
from relcollapse.field_kernel import ModeTable, TwoPointContext
from relcollapse.noise_kernel import KernelSpec


def workloads(scale: int, rng):
    ctx = TwoPointContext(1.0, 3, cfg=QuadratureConfig(cutoff=20.0), vacuum_half=True)
    tab = ModeTable(ctx, 40)
    n = 200 * scale
    t, y = rng.uniform(-3, 3, n), rng.uniform(0, 3, n)
    yield "mode_sums", (t, y, tab.q, tab.om, tab.wc, tab.ws, True)

    z = np.geomspace(1e-6, 40.0, 2000 * scale)
    yield "meijer_series", (z, 400)

    kind, par, ts, tv = KernelSpec("quartic", beta=1.0, dims=3).args()
    xg, wg = np.polynomial.legendre.leggauss(24)
    qs = np.linspace(0.3, 2.0, 16 * scale)
    yield "rate_inner", (qs, 1.0, 30.0, 50.0, kind, par, ts, tv, 1, 1.0, xg, wg, xg, wg, 8, 3)

    m = 20_000 * scale
    yield "mc_bracket", (kind, par, ts, tv, 1.0, rng.normal(size=(m, 3)), rng.normal(size=(m, 3)))


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out])
    return np.ravel(np.asarray(out, dtype=float))


def timed(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=1, help="multiply every workload size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not importable; both columns time the numpy path")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<14} {'first numba':>12} {'numba':>10} {'numpy':>10} {'speed-up':>9} {'max rel dev':>12}")
    for name, wl in workloads(args.scale, rng):
        nb, npy = K.IMPLEMENTATIONS[name]
        t0 = time.perf_counter()
        nb(*wl)
        first = time.perf_counter() - t0
        t_nb, a = timed(nb, wl, args.repeat)
        t_np, b = timed(npy, wl, args.repeat)
        a, b = _flat(a), _flat(b)
        dev = float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
        print(f"{name:<14} {first:12.4f} {t_nb:10.5f} {t_np:10.5f} {t_np / t_nb:9.1f} {dev:12.1e}")


if __name__ == "__main__":
    main()
