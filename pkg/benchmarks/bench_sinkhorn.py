#!/usr/bin/env python3
"""Benchmark the numba Sinkhorn kernel against the pure-numpy fallback.

Runs the log-domain iteration on a dense positive instance and on a sparse
Poisson draw, at a few sizes, and prints a timing table.  The numpy path is
called directly, so no environment flag is needed here; at runtime the
fallback is selected by setting SINKBRIDGE_DISABLE_NUMBA=1.
"""

import time

import numpy as np

from sinkbridge import kernels
from sinkbridge.scaling import MarginPair, ScalingProblem, sinkhorn_scale


def _instance(kind: str, n: int, rng):
    if kind == "dense":
        lam = rng.uniform(0.2, 2.0, (n, n))
    else:
        lam = rng.poisson(0.4, (n, n)).astype(float)
        lam[~lam.any(axis=1), 0] = 1.0  # keep rows/columns supported
        lam[0, ~lam.any(axis=0)] = 1.0
    margins = MarginPair(np.full(n, 0.3 * n), np.full(n, 0.3 * n))
    return lam, margins


def _run(fn, logK, log_r, log_c, tol, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(logK, log_r, log_c, tol, 100_000)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    rng = np.random.default_rng(0)
    tol = 1e-10
    print(f"numba available: {kernels.HAS_NUMBA} (active backend: {kernels.BACKEND})")
    print(f"{'instance':>14} {'size':>6} {'sweeps':>7} {'numpy [ms]':>11} "
          f"{'numba [ms]':>11} {'speedup':>8}")
    for kind in ("dense", "poisson"):
        for n in (100, 300, 1000):
            lam, margins = _instance(kind, n, rng)
            with np.errstate(divide="ignore"):
                logK = np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), -np.inf)
            log_r, log_c = np.log(margins.r), np.log(margins.c)

            def numpy_path(K, r, c, t, it):
                return kernels._sinkhorn_numpy(K, r, c, np.zeros(K.shape[0]),
                                               np.zeros(K.shape[1]), t, it)

            t_np, out = _run(numpy_path, logK, log_r, log_c, tol, 3)
            if kernels.HAS_NUMBA:
                def numba_path(K, r, c, t, it):
                    return kernels._sinkhorn_numba(
                        np.ascontiguousarray(K), np.ascontiguousarray(K.T),
                        r, c, np.zeros(K.shape[0]), np.zeros(K.shape[1]), t, it)
                numba_path(logK, log_r, log_c, tol, 2)  # compile before timing
                t_nb, out_nb = _run(numba_path, logK, log_r, log_c, tol, 3)
                assert np.allclose(out[0], out_nb[0], atol=1e-10)
                speed = f"{t_np / t_nb:7.1f}x"
                t_nb_ms = f"{1e3 * t_nb:11.2f}"
            else:
                speed, t_nb_ms = "     n/a", "        n/a"
            print(f"{kind:>14} {n:>6} {out[2]:>7} {1e3 * t_np:11.2f} {t_nb_ms} {speed}")

    # end-to-end sanity: the public entry point on the largest dense instance
    lam, margins = _instance("dense", 1000, rng)
    t0 = time.perf_counter()
    res = sinkhorn_scale(ScalingProblem(lam, margins), tol=tol)
    print(f"\nsinkhorn_scale 1000x1000 dense: {res.iterations} sweeps, "
          f"{1e3 * (time.perf_counter() - t0):.1f} ms, error {res.final_margin_error:.2e}")


if __name__ == "__main__":
    main()
