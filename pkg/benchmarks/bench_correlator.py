"""Throughput of the correlation kernels: numba versus pure numpy.

    python benchmarks/bench_correlator.py --tags 10000000 --bin-width 1000 --max-lag 1000000

Both kernels run in-process on the same Poisson streams; the numba kernel is
warmed up once so compile time is reported separately.
"""

import argparse
import time

import numpy as np

from spekit._accel import NUMBA_AVAILABLE
from spekit.correlator import _sweep_uniform_numba, _sweep_uniform_numpy, uniform_edges


def poisson_stream(n, rate_hz, rng):
    gaps = rng.exponential(1e12 / rate_hz, n)
    return np.cumsum(gaps).astype(np.int64)


def run(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--tags", type=int, default=10_000_000, help="total tags (both channels)")
    p.add_argument("--rate", type=float, default=1e6, help="count rate per channel, 1/s")
    p.add_argument("--bin-width", type=int, default=1000, help="ps")
    p.add_argument("--max-lag", type=int, default=1_000_000, help="ps")
    p.add_argument("--chunks", type=int, default=4)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    a = poisson_stream(args.tags // 2, args.rate, rng)
    b = poisson_stream(args.tags - args.tags // 2, args.rate, rng)
    e = uniform_edges(args.bin_width, args.max_lag)
    nbins = e.size - 1
    k = nbins // 2
    print(f"tags={args.tags} bins={nbins} bin_width={args.bin_width} ps "
          f"max_lag={args.max_lag} ps")

    ref, _ = run(_sweep_uniform_numpy, a, b, args.bin_width, k, nbins, args.max_lag)
    t_np = min(run(_sweep_uniform_numpy, a, b, args.bin_width, k, nbins, args.max_lag)[1]
               for _ in range(args.repeat))
    print(f"numpy   {t_np:8.3f} s  {args.tags / t_np / 1e6:8.2f} Mtags/s  "
          f"pairs={int(ref.sum())}")

    if not NUMBA_AVAILABLE:
        print("numba   not installed")
        return
    _, t_compile = run(_sweep_uniform_numba, a[:100], b[:100], args.bin_width, k, nbins,
                       args.max_lag, 1)
    out, _ = run(_sweep_uniform_numba, a, b, args.bin_width, k, nbins, args.max_lag,
                 args.chunks)
    t_nb = min(run(_sweep_uniform_numba, a, b, args.bin_width, k, nbins, args.max_lag,
                   args.chunks)[1] for _ in range(args.repeat))
    same = np.array_equal(out, ref)
    print(f"numba   {t_nb:8.3f} s  {args.tags / t_nb / 1e6:8.2f} Mtags/s  "
          f"(first call incl. compile {t_compile:.2f} s)  identical={same}")
    print(f"speedup {t_np / t_nb:.2f}x")


if __name__ == "__main__":
    main()
