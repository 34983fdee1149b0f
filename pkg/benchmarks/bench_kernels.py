"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--l 48] [--repeat 5]

Both implementations are importable side by side, so one process compares
them directly; the first numba call (compilation) is excluded.
"""

import argparse
import time

import numpy as np

from diracsearch import _accel, builtin
from diracsearch.bloch import momentum_grid, spectral_weights


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--l", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed")

    spec = builtin("staggered-hypercubic-3")
    ks = momentum_grid(spec.d, args.l)
    ent = _accel._prep_entries(*spec.entries)
    e, w = spectral_weights(spec, args.l, 0)
    e = np.ascontiguousarray(e, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)

    cases = {
        "fill_blocks": (
            lambda: _accel.fill_blocks_numpy(ks, *ent, spec.r),
            lambda: _accel.fill_blocks_numba(ks, *ent, spec.r),
        ),
        "chiral_invariants": (
            lambda: _accel.chiral_invariants_numpy(ks, *ent, spec.r),
            lambda: _accel.chiral_invariants_numba(ks, *ent, spec.r),
        ),
        "resolvent_sums": (
            lambda: _accel.resolvent_sums_numpy(e, w, 0.0123),
            lambda: _accel.resolvent_sums_numba(e, w, 0.0123),
        ),
        "moment_sums": (
            lambda: _accel.moment_sums_numpy(e, w, 4, 1e-9),
            lambda: _accel.moment_sums_numba(e, w, 4, 1e-9),
        ),
    }
    print(f"staggered d=3, l={args.l}: {len(ks)} momenta, {e.size} spectral weights")
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, (f_np, f_nb) in cases.items():
        f_nb()  # compile
        t_np = best_of(f_np, args.repeat)
        t_nb = best_of(f_nb, args.repeat)
        print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
