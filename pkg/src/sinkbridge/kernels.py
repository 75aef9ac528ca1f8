"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The log-domain Sinkhorn sweep dominates runtime in the Monte Carlo
experiments (thousands of solves per run), so it is compiled with numba
when available.  Setting the environment variable ``SINKBRIDGE_DISABLE_NUMBA``
to a non-empty value other than ``0``/``false`` forces the numpy path;
``benchmarks/bench_sinkhorn.py`` compares the two.

Both backends implement the same iteration: starting from potentials
(alpha, beta), each sweep updates beta from the column balance equations
and then alpha from the row balance equations, all in log space.  After
the alpha update the row margins are exact by construction, so convergence
is monitored on the maximum relative column-margin error.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.special import logsumexp

__all__ = ["BACKEND", "HAS_NUMBA", "sinkhorn_log", "sinkhorn_sweep", "margin_errors"]


def _numba_disabled() -> bool:
    flag = os.environ.get("SINKBRIDGE_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("", "0", "false")


try:
    if _numba_disabled():
        raise ImportError("numba disabled by SINKBRIDGE_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in tests
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


BACKEND = "numba" if HAS_NUMBA else "numpy"


def sinkhorn_sweep(logK, log_r, log_c, alpha, beta):
    """One full (beta, alpha) sweep in log domain; returns new potentials."""
    s = logsumexp(logK + alpha[:, None], axis=0)
    beta = log_c - s
    t = logsumexp(logK + beta[None, :], axis=1)
    alpha = log_r - t
    return alpha, beta


def margin_errors(logK, log_r, log_c, alpha, beta):
    """Max relative (row, column) margin errors of exp(alpha+beta) * K."""
    with np.errstate(over="ignore"):
        row = np.exp(alpha + logsumexp(logK + beta[None, :], axis=1) - log_r)
        col = np.exp(beta + logsumexp(logK + alpha[:, None], axis=0) - log_c)
    return np.abs(row - 1.0).max(), np.abs(col - 1.0).max()


def _sinkhorn_numpy(logK, log_r, log_c, alpha, beta, tol, max_iter):
    it = 0
    err = np.inf
    for it in range(max_iter + 1):
        s = logsumexp(logK + alpha[:, None], axis=0)
        with np.errstate(over="ignore"):
            err = np.abs(np.exp(beta + s - log_c) - 1.0).max()
        if it == 0:
            # rows are exact after every alpha half-step, but not at entry
            t = logsumexp(logK + beta[None, :], axis=1)
            with np.errstate(over="ignore"):
                err = max(err, np.abs(np.exp(alpha + t - log_r) - 1.0).max())
        if err <= tol:
            return alpha, beta, it, err, True
        if it == max_iter:
            break
        beta = log_c - s
        t = logsumexp(logK + beta[None, :], axis=1)
        alpha = log_r - t
    return alpha, beta, max_iter, err, False


@njit(cache=True)
def _sinkhorn_numba(logK, logKT, log_r, log_c, alpha, beta, tol, max_iter):  # pragma: no cover
    m, n = logK.shape
    err = np.inf
    s = np.empty(n)
    for it in range(max_iter + 1):
        # column log-sums with the current alpha
        err = 0.0
        for j in range(n):
            mx = -np.inf
            for i in range(m):
                v = alpha[i] + logKT[j, i]
                if v > mx:
                    mx = v
            acc = 0.0
            for i in range(m):
                acc += np.exp(alpha[i] + logKT[j, i] - mx)
            s[j] = mx + np.log(acc)
            e = abs(np.exp(beta[j] + s[j] - log_c[j]) - 1.0)
            if e > err:
                err = e
        if it == 0:
            # rows are exact after every alpha half-step, but not at entry
            for i in range(m):
                mx = -np.inf
                for j in range(n):
                    v = beta[j] + logK[i, j]
                    if v > mx:
                        mx = v
                acc = 0.0
                for j in range(n):
                    acc += np.exp(beta[j] + logK[i, j] - mx)
                e = abs(np.exp(alpha[i] + (mx + np.log(acc)) - log_r[i]) - 1.0)
                if e > err:
                    err = e
        if err <= tol:
            return alpha, beta, it, err, True
        if it == max_iter:
            break
        for j in range(n):
            beta[j] = log_c[j] - s[j]
        for i in range(m):
            mx = -np.inf
            for j in range(n):
                v = beta[j] + logK[i, j]
                if v > mx:
                    mx = v
            acc = 0.0
            for j in range(n):
                acc += np.exp(beta[j] + logK[i, j] - mx)
            alpha[i] = log_r[i] - (mx + np.log(acc))
    return alpha, beta, max_iter, err, False


def sinkhorn_log(logK, log_r, log_c, tol, max_iter, alpha0=None, beta0=None):
    """Run the log-domain iteration until the column error drops below tol.

    Returns ``(alpha, beta, iterations, margin_error, converged)``.
    """
    m, n = logK.shape
    alpha = np.zeros(m) if alpha0 is None else np.asarray(alpha0, dtype=float).copy()
    beta = np.zeros(n) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    if HAS_NUMBA:
        logK = np.ascontiguousarray(logK, dtype=np.float64)
        logKT = np.ascontiguousarray(logK.T)
        return _sinkhorn_numba(logK, logKT, log_r.astype(np.float64), log_c.astype(np.float64),
                               alpha, beta, float(tol), int(max_iter))
    return _sinkhorn_numpy(logK, log_r, log_c, alpha, beta, float(tol), int(max_iter))
