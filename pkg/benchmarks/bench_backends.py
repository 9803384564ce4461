"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run:  python3 benchmarks/bench_backends.py [--depths 8 10 12] [--lams 32]

The counting kernels are the hot path (one O(V) elimination per lambda per
replica); the projection kernel dominates the excursion route. Both
backends execute the same arithmetic, so outputs are asserted identical.
"""

import argparse
import time

import numpy as np

from crt_spectra import _kernels, asymptotics, excursion
from crt_spectra.spectrum import network_counts


def time_call(fn, *args, repeat=3):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_counts(depth: int, n_lams: int):
    net = asymptotics.build_network(depth, seed=7, trunc_depth=10)
    lams = np.geomspace(1.0, 1e7, n_lams)
    st = net.structure
    args = (net.vertex_mass, net.conductance, st.ep0_flat, st.ep1_flat, st.pass_offsets, net.level, lams)
    if _kernels.HAVE_NUMBA:
        network_counts(net, lams[:1])  # compile once
        t_numba, (d1, n1) = time_call(lambda: network_counts(net, lams))
    else:
        t_numba, d1, n1 = np.nan, None, None
    t_numpy, (d2, n2) = time_call(lambda: _kernels.counts_dendrite_numpy(*args))
    if d1 is not None:
        assert (d1 == d2).all() and (n1 == n2).all(), "backends disagree"
    return t_numba, t_numpy


def bench_projection(steps: int, leaves: int):
    path = excursion.sample_excursion(steps, seed=3)
    tree = excursion.reduced_tree(path, leaves, seed=4)
    vert = tree.time_idx
    if _kernels.HAVE_NUMBA:
        _kernels.nearest_vertex(path.values, vert)
        t_numba, (o1, b1) = time_call(lambda: _kernels.nearest_vertex(path.values, vert))
    else:
        t_numba, o1 = np.nan, None
    t_numpy, (o2, b2) = time_call(lambda: _kernels.nearest_vertex_numpy(path.values, vert))
    if o1 is not None:
        assert (o1 == o2).all()
    return t_numba, t_numpy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depths", type=int, nargs="+", default=[8, 10, 12])
    ap.add_argument("--lams", type=int, default=32)
    args = ap.parse_args()

    print(f"numba available: {_kernels.HAVE_NUMBA} (backend: {_kernels.active_backend()})")
    print()
    print(f"counting kernel, {args.lams} lambdas per call")
    print(f"{'depth':>6} {'cells':>9} {'numba [s]':>10} {'numpy [s]':>10} {'ratio':>6}")
    for depth in args.depths:
        tb, tn = bench_counts(depth, args.lams)
        print(f"{depth:>6} {3**depth:>9} {tb:>10.3f} {tn:>10.3f} {tn / tb if tb > 0 else float('nan'):>6.1f}")
    print()
    print("projection kernel (grid times onto spanned tree)")
    print(f"{'steps':>8} {'leaves':>7} {'numba [s]':>10} {'numpy [s]':>10} {'ratio':>6}")
    for steps, leaves in ((2**13, 200), (2**14, 600), (2**15, 1200)):
        tb, tn = bench_projection(steps, leaves)
        print(f"{steps:>8} {leaves:>7} {tb:>10.3f} {tn:>10.3f} {tn / tb if tb > 0 else float('nan'):>6.1f}")


if __name__ == "__main__":
    main()
