"""Benchmark the coordinate-descent kernels: numba vs pure numpy.

Runs the same penalized least-squares path through both sweep
implementations on a synthetic indicator-basis problem and reports wall
times and agreement. The package picks its backend at import time from
SHIFTEST_DISABLE_NUMBA; this script imports both implementations directly
so a single run covers them.

Usage:  python benchmarks/bench_solver.py [n] [n_covariates]
"""

import sys
import time

import numpy as np

from shiftest import hal
from shiftest import solver
from shiftest._accel import NUMBA_ENABLED


def make_problem(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = np.sin(X[:, 0]) + 0.5 * (X[:, 1] > 0) + rng.normal(0.0, 0.3, n)
    basis = hal.build_basis(X, max_degree=2, max_knots_per_dim=12)
    B = basis.transform(X)
    _, keep = np.unique(B, axis=1, return_index=True)
    B = B[:, keep]
    u = np.ones(n) / n
    lam_max = solver.lambda_max(B, y, u, "gaussian")
    grid = hal.default_lambda_grid(lam_max, 30)
    return B, y, u, grid


def run_path(kernel, B, y, u, grid, repeats=3):
    solver._gaussian_cd = kernel
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        ints, betas = solver.solve_path(B, y, u, grid, "gaussian")
        best = min(best, time.perf_counter() - t0)
    return best, ints, betas


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    p = int(sys.argv[2]) if len(sys.argv) > 2 else 3
    B, y, u, grid = make_problem(n, p)
    print(f"problem: n={n}, basis columns={B.shape[1]}, grid={grid.size} penalties")

    original = solver._gaussian_cd
    try:
        t_np, ints_np, betas_np = run_path(solver._gaussian_cd_numpy, B, y, u, grid)
        print(f"numpy sweeps : {t_np:8.3f} s per path")
        if NUMBA_ENABLED:
            # first call includes JIT compilation; warm then measure
            run_path(solver._gaussian_cd_numba, B, y, u, grid, repeats=1)
            t_nb, ints_nb, betas_nb = run_path(solver._gaussian_cd_numba, B, y, u, grid)
            print(f"numba sweeps : {t_nb:8.3f} s per path   (x{t_np / t_nb:.1f} speedup)")
            gap = np.max(np.abs(betas_np - betas_nb))
            print(f"max |beta difference| between backends: {gap:.2e}")
        else:
            print("numba unavailable or disabled; numpy path only")
    finally:
        solver._gaussian_cd = original


if __name__ == "__main__":
    main()
