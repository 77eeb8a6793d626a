#!/usr/bin/env python3
"""Compare the numba kernels against the numpy/scipy fallback.

Runs the two hot paths (PDE time stepping, Monte Carlo path loop) once per
backend on the bundled six-asset market and reports wall time and the
largest result difference. The first numba call includes JIT compilation;
it is timed separately.

Usage: python benchmarks/bench_kernels.py [--paths N] [--horizon T]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from hjbportfolio.backend import HAVE_NUMBA
from hjbportfolio.market import load_market_csv
from hjbportfolio.pde import GridSpec, solve
from hjbportfolio.qp import build_alpha_table
from hjbportfolio.simulate import SimConfig, simulate
from hjbportfolio.utility import UtilitySpec

DATA = Path(__file__).resolve().parent.parent / "data"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=5000)
    ap.add_argument("--horizon", type=float, default=10.0)
    args = ap.parse_args()

    market = load_market_csv(DATA / "dax6_mu.csv", DATA / "dax6_sigma.csv",
                             epsilon=1.0, r=0.0)
    t0 = time.perf_counter()
    table = build_alpha_table(market)
    print(f"alpha table ({len(table.phi_grid)} nodes): {time.perf_counter() - t0:.2f}s")

    grid = GridSpec(T=args.horizon)
    spec = UtilitySpec.cara(9.0)
    n_steps = int(round(args.horizon / 0.05))
    snaps = np.round(np.arange(0, n_steps + 1) * 0.05, 12)
    print(f"PDE grid: {grid.n_interior + 2} nodes x {grid.m_steps} steps")

    rows = []
    field = {}
    if HAVE_NUMBA:
        t0 = time.perf_counter()
        solve(spec, table, market, grid, snapshot_times=[args.horizon])
        compile_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        field["numba"] = solve(spec, table, market, grid, snapshot_times=snaps)
        rows.append(("pde solve", "numba", time.perf_counter() - t0,
                     f"(first call incl. jit: {compile_s:.2f}s)"))
    t0 = time.perf_counter()
    field["numpy"] = solve(spec, table, market, grid, snapshot_times=snaps,
                           force_numpy=True)
    rows.append(("pde solve", "numpy", time.perf_counter() - t0, ""))
    if HAVE_NUMBA:
        diff = np.abs(field["numba"].values - field["numpy"].values).max()
        rows.append(("pde solve", "max |diff|", diff, ""))

    cfg = SimConfig(n_paths=args.paths, T=args.horizon, seed=42)
    batches = {}
    if HAVE_NUMBA:
        simulate(field["numba"], table, market, SimConfig(n_paths=8, T=args.horizon, seed=1))
        t0 = time.perf_counter()
        batches["numba"] = simulate(field["numba"], table, market, cfg)
        rows.append(("simulate", "numba", time.perf_counter() - t0, ""))
    t0 = time.perf_counter()
    batches["numpy"] = simulate(field["numpy"], table, market, cfg, force_numpy=True)
    rows.append(("simulate", "numpy", time.perf_counter() - t0, ""))
    if HAVE_NUMBA:
        diff = np.abs(batches["numba"].terminal_wealth - batches["numpy"].terminal_wealth).max()
        rows.append(("simulate", "max |diff|", diff, ""))

    print()
    for stage, backend, value, note in rows:
        shown = f"{value:.3f}s" if isinstance(value, float) and "diff" not in backend \
            else f"{value:.3e}"
        print(f"{stage:10s} {backend:12s} {shown:>12s} {note}")
    if not HAVE_NUMBA:
        print("numba not installed: only the numpy path was run")


if __name__ == "__main__":
    main()
