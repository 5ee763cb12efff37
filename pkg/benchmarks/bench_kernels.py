#!/usr/bin/env python3
"""Benchmark the native repair kernel against the pure numpy fallback.

Runs the greedy +-1 repair on identical synthetic instances with both
implementations and reports wall time and agreement, then times a full
heuristic segment solve under each backend.

Usage: python benchmarks/bench_kernels.py [--routes N] [--rows M]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from demandforge import _kernels_py

try:
    from demandforge import _kernels as native
except ImportError:
    native = None


def make_instance(n_routes, n_rows, seed):
    rng = np.random.default_rng(seed)
    hits = rng.random((n_routes, n_rows)) < min(0.5, 200.0 / n_routes)
    indptr = np.zeros(n_routes + 1, dtype=np.int64)
    np.cumsum(hits.sum(axis=1), out=indptr[1:])
    indices = np.nonzero(hits)[1].astype(np.int64)
    target = rng.integers(0, 2, size=n_routes)
    counts = hits.astype(float).T @ target.astype(float)
    lo = 0.94 * counts
    hi = 1.12 * counts
    weight = np.ones(n_rows)
    usage0 = np.zeros(n_routes, dtype=np.int64)
    linear = np.where(rng.random(n_routes) < 0.2, 10.0, 0.0)
    prev = np.zeros(n_routes, dtype=np.int64)
    return dict(indptr=indptr, indices=indices, lo=lo, hi=hi, weight=weight,
                hits=hits, usage0=usage0, linear=linear, prev=prev)


def run_repair(impl, inst, upper=2000, lam_t=10.0):
    usage = inst["usage0"].copy()
    values = inst["hits"].astype(float).T @ usage.astype(float)
    started = time.perf_counter()
    moves = impl.greedy_repair(inst["indptr"], inst["indices"], inst["lo"],
                               inst["hi"], inst["weight"], values, usage,
                               upper, inst["linear"], lam_t, inst["prev"], 1,
                               50_000)
    return time.perf_counter() - started, moves, usage


def objective(inst, usage):
    values = inst["hits"].astype(float).T @ usage.astype(float)
    gap = np.where(values < inst["lo"], inst["lo"] - values,
                   np.where(values > inst["hi"], values - inst["hi"], 0.0))
    f = float(inst["weight"] @ (gap * gap)) + float(inst["linear"] @ usage)
    return f + 10.0 * float(((usage - inst["prev"]) ** 2).sum())


def bench_repair(n_routes, n_rows):
    print(f"greedy repair: {n_routes} routes x {n_rows} constraint rows")
    inst = make_instance(n_routes, n_rows, seed=42)
    t_py, moves_py, usage_py = run_repair(_kernels_py, inst)
    print(f"  python  {t_py:8.3f}s  ({moves_py} moves, "
          f"objective {objective(inst, usage_py):.2f})")
    if native is None:
        print("  native  not built")
        return
    t_c, moves_c, usage_c = run_repair(native, inst)
    gap = abs(objective(inst, usage_c) - objective(inst, usage_py))
    print(f"  native  {t_c:8.3f}s  ({moves_c} moves, "
          f"objective {objective(inst, usage_c):.2f})  "
          f"speedup {t_py / max(t_c, 1e-9):.1f}x  objective gap {gap:.2e}")


def bench_solve():
    """Full heuristic segment solve per backend, in subprocesses so the
    import-time backend selection applies."""
    snippet = (
        "import time, numpy as np;"
        "import sys; sys.path.insert(0, 'tests');"
        "from conftest import build_scaled_day;"
        "from demandforge.qipsolve import SolveConfig, solve_segment;"
        "from demandforge import kernels;"
        "inc, problems = build_scaled_day(n_segments=1);"
        "t0 = time.perf_counter();"
        "s = solve_segment(problems[0], SolveConfig());"
        "print(f'{kernels.BACKEND}: {time.perf_counter()-t0:.2f}s "
        "objective={s.objective:.1f}')"
    )
    print("full segment solve (11664 route variables):")
    for env_extra in ({}, {"DEMANDFORGE_PURE": "1"}):
        env = dict(os.environ, **env_extra)
        out = subprocess.run([sys.executable, "-c", snippet], env=env,
                             capture_output=True, text=True)
        print("  " + (out.stdout.strip() or out.stderr.strip().splitlines()[-1]))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--routes", type=int, default=10_000)
    parser.add_argument("--rows", type=int, default=100)
    args = parser.parse_args()
    bench_repair(args.routes, args.rows)
    bench_repair(500, 40)
    bench_solve()


if __name__ == "__main__":
    main()
