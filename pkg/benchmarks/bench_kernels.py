"""Time the numba and plain-numpy variants of the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

The plain variants are what runs under MLSA_JIT=0.
"""

import argparse
import time

import numpy as np

from mlsolv import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def rnn_case(cell, rng, n_mols=32, atoms=12, d=128):
    G = 3 if cell == K.GRU else 4
    offsets = np.arange(0, n_mols * atoms + 1, atoms, dtype=np.int64)
    xw = rng.standard_normal((n_mols * atoms, G * d)) * 0.3
    U = rng.standard_normal((d, G * d)) * 0.1
    return xw, U, offsets


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if K.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rows = []
    for name, cell in (("gru", K.GRU), ("lstm", K.LSTM)):
        xw, U, off = rnn_case(cell, rng)
        fwd = K.rnn_forward_jit(xw, U, off, cell, False)  # compile
        dH = rng.standard_normal(fwd[0].shape)
        K.rnn_backward_jit(dH, U, *fwd[1:], off, cell, False)
        rows.append((f"{name} forward", best_of(lambda: K.rnn_forward_py(xw, U, off, cell, False), args.repeat),
                     best_of(lambda: K.rnn_forward_jit(xw, U, off, cell, False), args.repeat)))
        rows.append((f"{name} backward",
                     best_of(lambda: K.rnn_backward_py(dH, U, *fwd[1:], off, cell, False), args.repeat),
                     best_of(lambda: K.rnn_backward_jit(dH, U, *fwd[1:], off, cell, False), args.repeat)))

    V, d, P = 2000, 128, 20000
    centers = rng.integers(0, V, P)
    contexts = rng.integers(0, V, P)
    negs = rng.integers(0, V, (P, 5))
    lrs = np.full(P, 0.025)
    w_in0 = (rng.random((V, d)) - 0.5) / d
    K.sgns_update_jit(w_in0.copy(), np.zeros((V, d)), centers[:10], contexts[:10], negs[:10], lrs[:10])
    rows.append(("skip-gram update",
                 best_of(lambda: K.sgns_update_py(w_in0.copy(), np.zeros((V, d)), centers, contexts, negs, lrs),
                         args.repeat),
                 best_of(lambda: K.sgns_update_jit(w_in0.copy(), np.zeros((V, d)), centers, contexts, negs, lrs),
                         args.repeat)))

    print(f"{'kernel':<20}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}")
    for name, t_py, t_jit in rows:
        print(f"{name:<20}{t_py:>12.4f}{t_jit:>12.4f}{t_py / t_jit:>9.1f}x")


if __name__ == "__main__":
    main()
