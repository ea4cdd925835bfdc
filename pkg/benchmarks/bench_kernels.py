#!/usr/bin/env python3
"""Numba vs numpy timings for the loop kernels in ``ommpp._kernels``.

Also times one application of the sparsifying preconditioner and one
Hamiltonian apply, to show how much of a solve the kernels account for.

    python3 benchmarks/bench_kernels.py --side 64 --cols 8
"""

import argparse
import json
import time

import numpy as np

from ommpp import _kernels
from ommpp.grid import HamiltonianOp, PotentialSpec, build_grid, sample_potential
from ommpp.sparsify import build_sparsified, precond_apply

WARMUP = 2
RUNS = 5


def timeit(fn, *args, warmup=WARMUP, runs=RUNS):
    for _ in range(warmup):
        fn(*args)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench(side: int, cols: int, q: int, npts: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    w = 2 * q + 1
    u = rng.standard_normal((side, side, cols)) + 1j * rng.standard_normal((side, side, cols))
    stencil = rng.standard_normal((w, w)) + 1j * rng.standard_normal((w, w))
    cw = rng.standard_normal((w, w)) + 0j
    diag = rng.standard_normal((side, side)) + 0j
    x = rng.standard_normal(npts) + 0j
    nodes = np.exp(2j * np.pi * (np.arange(30) + 0.5) / 30)
    weights = nodes / 30

    cases = {
        "stencil_apply": (_kernels.stencil_apply_numpy, _kernels.stencil_apply_numba, (u, stencil)),
        "stencil_matrix": (_kernels.stencil_matrix_numpy, _kernels.stencil_matrix_numba, (stencil, cw, diag)),
        "rational_sum": (_kernels.rational_sum_numpy, _kernels.rational_sum_numba, (x, nodes, weights)),
    }
    out = {}
    for name, (f_np, f_nb, args) in cases.items():
        t_np = timeit(f_np, *args)
        t_nb = timeit(f_nb, *args)
        out[name] = {"numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb}

    # context: full preconditioner apply vs one H apply on the same grid
    if side % 8 == 0:
        grid = build_grid(side // 8)
        V = sample_potential(grid, PotentialSpec(global_scale=100.0, vacancy_mode="fraction", vacancies=0.25))
        H = HamiltonianOp(grid, V)
        S = build_sparsified(grid, V, complex(V.min(), 1.0), q=q)
        B = rng.standard_normal((grid.n, cols))
        out["context"] = {
            "precond_apply_s": timeit(precond_apply, S, B),
            "hamiltonian_apply_s": timeit(H.apply, B),
        }
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--cols", type=int, default=8)
    ap.add_argument("--q", type=int, default=1)
    ap.add_argument("--npts", type=int, default=20000)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args()

    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    res = bench(args.side, args.cols, args.q, args.npts)
    if args.json:
        print(json.dumps(res, indent=2))
        return
    print(f"side={args.side} cols={args.cols} q={args.q} npts={args.npts} (median of {RUNS})")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, r in res.items():
        if name == "context":
            continue
        print(f"{name:<16}{1e3 * r['numpy_s']:>12.3f}{1e3 * r['numba_s']:>12.3f}{r['speedup']:>10.2f}")
    if "context" in res:
        c = res["context"]
        print(f"precond_apply {1e3 * c['precond_apply_s']:.3f} ms, H apply {1e3 * c['hamiltonian_apply_s']:.3f} ms")


if __name__ == "__main__":
    main()
