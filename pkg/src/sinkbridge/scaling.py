"""Sinkhorn matrix scaling, potential gauges, and exact scalability checks.

Conventions: a nonnegative prior matrix ``lam`` (m x n) is rescaled to
prescribed positive margins (r, c) as ``exp(alpha (+) beta) * lam``, where
(alpha, beta) are the scaling potentials, unique up to the one-parameter
shift (alpha - s, beta + s).  All iteration happens in log domain.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .errors import (
    DimensionMismatch,
    MaxIterationsError,
    NonPositiveMargin,
    TooLargeForExact,
    ZeroPatternMismatch,
)
from . import kernels

__all__ = [
    "Gauge",
    "MarginPair",
    "ScalingProblem",
    "Potentials",
    "ScalingResult",
    "ScalabilityVerdict",
    "sinkhorn_scale",
    "dual_objective",
    "kl_to_reference",
    "check_scalability",
    "gauge_fix",
    "gauge_distance",
    "potential_bounds",
]

EXACT_SCALABILITY_CAP = 40  # subset enumeration is exponential in m + n
INF = np.inf


class Gauge(enum.Enum):
    """Normalization pinning the free shift of the potentials."""

    BETA_C_WEIGHTED = "beta_c_weighted"   # <beta, c> = 0
    MAX_EQUALIZED = "max_equalized"       # max exp(alpha) = max exp(beta)
    KERNEL_ORTHOGONAL = "kernel_orthogonal"  # (alpha, beta) _|_ (1, -1)


@dataclass(frozen=True)
class MarginPair:
    """Target row and column sums with common total mass N."""

    r: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        if self.r.ndim != 1 or self.c.ndim != 1:
            raise DimensionMismatch("margins must be 1-D vectors")
        if (self.r < 0).any() or (self.c < 0).any():
            raise NonPositiveMargin("margins must be nonnegative")
        sr, sc = self.r.sum(), self.c.sum()
        if abs(sr - sc) > 1e-9 * max(sr, sc, 1.0):
            raise DimensionMismatch(f"row total {sr!r} != column total {sc!r}")

    @property
    def m(self) -> int:
        return self.r.size

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def N(self) -> float:
        return float(self.r.sum())

    def require_positive(self):
        if (self.r <= 0).any() or (self.c <= 0).any():
            raise NonPositiveMargin("margins must be strictly positive")


@dataclass(frozen=True)
class ScalingProblem:
    """Nonnegative prior matrix plus the margins it should be scaled to."""

    lam: np.ndarray
    margins: MarginPair

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))
        if self.lam.ndim != 2:
            raise DimensionMismatch("lam must be a matrix")
        if self.lam.shape != (self.margins.m, self.margins.n):
            raise DimensionMismatch(
                f"lam shape {self.lam.shape} does not match margins "
                f"({self.margins.m}, {self.margins.n})"
            )
        if (self.lam < 0).any():
            raise ValueError("lam must be nonnegative")

    @property
    def shape(self):
        return self.lam.shape


@dataclass(frozen=True)
class Potentials:
    alpha: np.ndarray
    beta: np.ndarray
    gauge: Gauge = Gauge.BETA_C_WEIGHTED

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    def shifted(self, s: float) -> "Potentials":
        """Apply the gauge shift (alpha - s, beta + s); the scaled matrix is unchanged."""
        return replace(self, alpha=self.alpha - s, beta=self.beta + s)

    def scale(self, lam: np.ndarray) -> np.ndarray:
        """exp(alpha (+) beta) * lam, entrywise."""
        return np.exp(self.alpha)[:, None] * lam * np.exp(self.beta)[None, :]


@dataclass(frozen=True)
class ScalingResult:
    potentials: Potentials
    rescaled: np.ndarray
    iterations: int
    final_margin_error: float


@dataclass(frozen=True)
class ScalabilityVerdict:
    scalable: bool
    witness: tuple | None = None  # (I, J) as sorted tuples of 0-based indices
    method: str = "exact"

    def __bool__(self):
        return self.scalable


def _log_matrix(lam: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), -INF)


def sinkhorn_scale(problem: ScalingProblem, tol: float = 1e-10, max_iter: int = 100_000,
                   gauge: Gauge = Gauge.BETA_C_WEIGHTED) -> ScalingResult:
    """Scale ``problem.lam`` to the target margins by log-domain Sinkhorn.

    Alternates the dual column/row balance updates until the maximum
    relative margin error drops below ``tol`` (checked after each full
    sweep; rows are exact after the alpha half-step, so the column error
    is the binding one).  Raises :class:`MaxIterationsError` when the
    tolerance is not met, which on exact inputs signals a non-scalable or
    near-degenerate zero pattern.
    """
    margins = problem.margins
    margins.require_positive()
    lam = problem.lam
    if not np.all(lam.any(axis=1)):
        raise MaxIterationsError("a row of lam has empty support but a positive target margin")
    if not np.all(lam.any(axis=0)):
        raise MaxIterationsError("a column of lam has empty support but a positive target margin")

    logK = _log_matrix(lam)
    log_r = np.log(margins.r)
    log_c = np.log(margins.c)
    alpha, beta, iterations, err, converged = kernels.sinkhorn_log(
        logK, log_r, log_c, tol, max_iter
    )
    if not converged:
        raise MaxIterationsError(
            f"margin error {err:.3e} > tol {tol:.3e} after {max_iter} sweeps",
            alpha=alpha, beta=beta, iterations=iterations, margin_error=float(err),
        )
    pot = gauge_fix(Potentials(alpha, beta, gauge), margins, gauge)
    rescaled = pot.scale(lam)
    return ScalingResult(pot, rescaled, int(iterations), float(err))


def dual_objective(problem: ScalingProblem, pot: Potentials) -> float:
    """Kantorovich dual value <alpha,r> + <beta,c> - <exp(alpha(+)beta), lam>."""
    margins = problem.margins
    if pot.alpha.size != margins.m or pot.beta.size != margins.n:
        raise DimensionMismatch("potential lengths do not match margins")
    coupling = pot.scale(problem.lam)
    return float(pot.alpha @ margins.r + pot.beta @ margins.c - coupling.sum())


def kl_to_reference(Z: np.ndarray, lam: np.ndarray) -> float:
    """Relative entropy sum Z*log(Z/lam), with 0*log 0 = 0.

    Returns +inf when Z puts mass where lam vanishes (absolute continuity
    failure); infinity is a value here, never an exception.
    """
    Z = np.asarray(Z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if Z.shape != lam.shape:
        raise DimensionMismatch("Z and lam must have the same shape")
    pos = Z > 0
    if np.any(pos & (lam <= 0)):
        return INF
    zp = Z[pos]
    return float(np.sum(zp * np.log(zp / lam[pos])))


def _exact_scalability(A: np.ndarray, r: np.ndarray, c: np.ndarray) -> ScalabilityVerdict:
    """Enumerate the combinatorial consistency condition on subset pairs.

    For every pair (I, J) with A[I^c, J] == 0 the row mass of I must
    dominate the column mass of J, with equality exactly when A[I, J^c]
    also vanishes.  Pairs are generated per column subset J together with
    the rows vanishing on J, which covers all admissible pairs without
    scanning the full 2^(m+n) grid.
    """
    m, n = A.shape
    N = float(r.sum())
    eqtol = 1e-9 * max(N, 1.0)
    support = A > 0

    zero_rows = np.where(~support.any(axis=1))[0]
    if zero_rows.size:
        # ({i0}, {}) violates: A[{i0}, all cols] = 0 forces R_I == C_J = 0, but r_i0 > 0
        return ScalabilityVerdict(False, ((int(zero_rows[0]),), ()), "exact")

    rows_all = frozenset(range(m))
    for size in range(1, n + 1):
        # J = {} needs no check once zero rows are excluded
        for J in combinations(range(n), size):
            Jmask = np.zeros(n, dtype=bool)
            Jmask[list(J)] = True
            CJ = float(c[Jmask].sum())
            vanish = np.where(~support[:, Jmask].any(axis=1))[0]  # rows zero on J
            I_min = sorted(rows_all - set(vanish.tolist()))
            R_min = float(r[I_min].sum())
            if R_min < CJ - eqtol:
                return ScalabilityVerdict(False, (tuple(I_min), J), "exact")
            # remaining admissible I are I_min + S with S among the vanishing rows;
            # enumerate them to settle the equality cases in both directions
            for ssize in range(vanish.size + 1):
                for S in combinations(vanish.tolist(), ssize):
                    I = tuple(sorted(I_min + list(S)))
                    RI = R_min + float(r[list(S)].sum())
                    off_zero = not support[list(I)][:, ~Jmask].any()
                    if abs(RI - CJ) <= eqtol:
                        if not off_zero:
                            return ScalabilityVerdict(False, (I, J), "exact")
                    elif off_zero:
                        return ScalabilityVerdict(False, (I, J), "exact")
    return ScalabilityVerdict(True, None, "exact")


def check_scalability(A: np.ndarray, margins: MarginPair, exact: bool | None = None) -> ScalabilityVerdict:
    """Decide whether A can be diagonally scaled to the margins.

    Strictly positive matrices are scalable to any positive margin; that
    shortcut is applied first.  Otherwise exact mode enumerates subset
    pairs (capped at m + n <= 40).  ``exact=True`` forces enumeration,
    ``exact=False`` forbids it (positive shortcut only).
    """
    A = np.asarray(A, dtype=float)
    margins.require_positive()
    if A.shape != (margins.m, margins.n):
        raise DimensionMismatch("matrix shape does not match margins")
    m, n = A.shape
    if exact is not True and (A > 0).all():
        return ScalabilityVerdict(True, None, "positive_shortcut")
    if exact is False:
        raise TooLargeForExact("matrix has zero entries and exact mode was disallowed")
    if m + n > EXACT_SCALABILITY_CAP:
        raise TooLargeForExact(
            f"m + n = {m + n} exceeds the exact-mode cap {EXACT_SCALABILITY_CAP}"
        )
    if n <= m:
        return _exact_scalability(A, margins.r, margins.c)
    # enumerate over the smaller side: A scalable to (r, c) iff A^T scalable to
    # (c, r); a violating pair (I', J') for A^T maps to (J'^c, I'^c) for A
    verdict = _exact_scalability(A.T, margins.c, margins.r)
    if verdict.scalable:
        return verdict
    Ip, Jp = verdict.witness
    I = tuple(i for i in range(m) if i not in set(Jp))
    J = tuple(j for j in range(n) if j not in set(Ip))
    return ScalabilityVerdict(False, (I, J), "exact")


def gauge_fix(pot: Potentials, margins: MarginPair, gauge: Gauge) -> Potentials:
    """Shift (alpha - s, beta + s) so the requested normalization holds."""
    if gauge is Gauge.BETA_C_WEIGHTED:
        # sum_j (beta_j + s) c_j = 0
        s = -float(pot.beta @ margins.c) / margins.N
    elif gauge is Gauge.MAX_EQUALIZED:
        # max(alpha - s) = max(beta + s)
        s = (pot.alpha.max() - pot.beta.max()) / 2.0
    elif gauge is Gauge.KERNEL_ORTHOGONAL:
        # project onto the orthogonal complement of the shift direction (1, -1)
        s = (pot.alpha.sum() - pot.beta.sum()) / (pot.alpha.size + pot.beta.size)
    else:  # pragma: no cover
        raise ValueError(f"unknown gauge {gauge!r}")
    return Potentials(pot.alpha - s, pot.beta + s, gauge)


def gauge_distance(p1: Potentials, p2: Potentials) -> float:
    """inf over t of max(||a1 - a2 + t||_inf, ||b1 - b2 - t||_inf).

    The objective is the max of four lines of slope +-1 in t, so the
    infimum has the closed form (max(Ma, -mb) + max(-ma, Mb)) / 2 built
    from the extremes of the two difference vectors.
    """
    if p1.alpha.size != p2.alpha.size or p1.beta.size != p2.beta.size:
        raise DimensionMismatch("potential dimensions differ")
    da = p1.alpha - p2.alpha
    db = p1.beta - p2.beta
    up = max(da.max(), -db.min())    # coefficient of the rising lines
    down = max(-da.min(), db.max())  # coefficient of the falling lines
    return float((up + down) / 2.0)


def potential_bounds(problem: ScalingProblem) -> tuple[float, float]:
    """Two-sided bound on alpha_i + beta_j from the normalized cost extremes.

    With kbar(i,j) = log(rbar_i cbar_j / lambar_ij) on the normalized
    problem, every exact potential sum lies in
    [-2(kbar_- + kbar_+) + log(N/||lam||_1),  2 kbar_+ + log(N/||lam||_1)].
    Requires the zero patterns of lam and r (x) c to agree.
    """
    lam = problem.lam
    margins = problem.margins
    prod = np.outer(margins.r, margins.c)
    if ((lam == 0) != (prod == 0)).any():
        raise ZeroPatternMismatch("lam_ij = 0 must hold exactly where r_i c_j = 0")
    mass = lam.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        kbar = np.where(prod > 0, np.log((prod / margins.N**2) / (lam / mass)), 0.0)
    kplus = float(max(kbar.max(), 0.0))
    kminus = float(max((-kbar).max(), 0.0))
    shift = float(np.log(margins.N / mass))
    return (-2.0 * (kminus + kplus) + shift, 2.0 * kplus + shift)
