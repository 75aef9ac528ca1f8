"""Explicit stability and concentration constants, plus inequality verifiers.

Everything here is an evaluator: given a concrete instance it computes the
constants and bound values in closed form, and the Monte Carlo suites check
the corresponding inequalities on random instances (bridges computed by
Sinkhorn, distances by the measures module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import UnboundedCost, ZeroAlignment, ZeroEntry
from .measures import GridDensity1D, GridDensity2D, cost_bound_K, delta_smoothness, hellinger, l1_density_distance
from .rng import derive_rng
from .scaling import (
    MarginPair,
    Potentials,
    ScalingProblem,
    gauge_distance,
    sinkhorn_scale,
)

__all__ = [
    "StabilityConstants",
    "PotentialStabilityReport",
    "ScalabilityBound",
    "row_alignment",
    "stability_constant_CA",
    "eps_max_from_CA",
    "concentration_constants",
    "potential_stability_check",
    "discrete_cost",
    "kernel_stability_rhs",
    "margin_stability_rhs",
    "total_stability_rhs",
    "deterministic_limit_rhs",
    "scalability_probability_bound",
    "hellinger_discrete",
    "run_stability_inequality_suite",
    "run_potential_stability_suite",
]


@dataclass(frozen=True)
class StabilityConstants:
    """All explicit constants evaluated on one problem instance."""

    rho_A: float
    C_A: float
    eps_max: float
    C_star: float
    eps0: float
    eps_pot: float
    tau: float
    t_D: float
    Phi: float
    K: float
    delta: float
    eps_cov: float = math.nan

    def as_dict(self) -> dict:
        return asdict(self)


def row_alignment(A: np.ndarray) -> float:
    """min over ordered row pairs (i1, i2) of n^-1 sum_j A_i1j A_i2j."""
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    return float((A @ A.T).min() / n)


def stability_constant_CA(A: np.ndarray, margins: MarginPair) -> float:
    """C_A = 1 + 9 max_i r_i max_j c_j / (rho_A m n)."""
    rho = row_alignment(A)
    if rho <= 0:
        raise ZeroAlignment("row alignment vanishes; stability constant undefined")
    m, n = margins.m, margins.n
    return float(1.0 + 9.0 * margins.r.max() * margins.c.max() / (rho * m * n))


def eps_max_from_CA(C_A: float) -> float:
    return 1.0 / (50.0 * C_A**2)


def concentration_constants(problem: ScalingProblem, sigma: float, R: float, D: float,
                            s_max: float | None = None) -> StabilityConstants:
    """Evaluate the concentration constants for a positive-mean problem.

    tau = (D+1) log(m v n) + log 4,
    eps0 = e^{2K} (m v n) / (delta ||lam||_1) * (sigma sqrt(2 (m v n) tau) + 2 R tau),
    C* = 1 + 18 e^{8K} ||lam||_1^2 / (delta^2 lam_min^2 m^2 n^2),
    Phi = min(n lam_min^4 / (sigma+R+lam_max)^4, sqrt(n) lam_min / (sigma+R+lam_max)),
    t_D = sigma sqrt(2 (m v n) tau) + 2 R tau,  eps_pot = 16 C* eps0.

    ``eps_cov`` additionally needs the flatness parameter of the fluctuation
    scaling; pass ``s_max`` (see :func:`sinkbridge.spectral.flatness_smax`)
    to fill it, otherwise it is NaN.
    """
    lam = problem.lam
    if (lam <= 0).any():
        raise ZeroEntry("concentration constants require a strictly positive mean matrix")
    if D <= 0:
        raise ValueError("D must be positive")
    margins = problem.margins
    m, n = lam.shape
    big = max(m, n)
    K = cost_bound_K(problem)
    delta = delta_smoothness(margins)
    mass = lam.sum()
    tau = (D + 1.0) * math.log(big) + math.log(4.0)
    t_D = sigma * math.sqrt(2.0 * big * tau) + 2.0 * R * tau
    eps0 = math.exp(2.0 * K) * big / (delta * mass) * t_D
    lam_min = lam.min()
    lam_max = lam.max()
    C_star = 1.0 + 18.0 * math.exp(8.0 * K) * mass**2 / (delta**2 * lam_min**2 * m**2 * n**2)
    scale = sigma + R + lam_max
    Phi = min(n * lam_min**4 / scale**4, math.sqrt(n) * lam_min / scale)
    eps_pot = 16.0 * C_star * eps0

    rho = row_alignment(lam)
    C_A = stability_constant_CA(lam, margins)

    eps_cov = math.nan
    if s_max is not None:
        N = margins.N
        eps_cov = (3.0 * math.exp(4.0 * K) * N**2 * eps_pot * t_D**2 * (2.0 + 3.0 * eps_pot)
                   / (big * s_max * mass**2))
    return StabilityConstants(
        rho_A=rho, C_A=C_A, eps_max=eps_max_from_CA(C_A),
        C_star=C_star, eps0=eps0, eps_pot=eps_pot, tau=tau, t_D=t_D, Phi=Phi,
        K=K, delta=delta, eps_cov=eps_cov,
    )


@dataclass(frozen=True)
class PotentialStabilityReport:
    eps: float
    eps_max: float
    rho_A: float
    C_A: float
    bound: float
    actual: float
    holds: bool
    within_eps_max: bool


def potential_stability_check(A: np.ndarray, margins: MarginPair,
                              tol: float = 1e-12, max_iter: int = 200_000) -> PotentialStabilityReport:
    """Check ||(alpha_A, beta_A)||_inf <= 4 C_A eps at the minimal-norm gauge.

    eps is the maximum relative deviation of A's current margins from the
    target; the exact potentials are computed by Sinkhorn, and "actual" is
    the sup norm minimized over the one-parameter gauge shift (the same
    breakpoint search as the gauge distance to zero potentials).  When eps
    exceeds eps_max the bound's precondition fails; the report still
    carries the computed values, flagged by ``within_eps_max``.
    """
    A = np.asarray(A, dtype=float)
    margins.require_positive()
    eps_r = np.abs(A.sum(axis=1) / margins.r - 1.0).max()
    eps_c = np.abs(A.sum(axis=0) / margins.c - 1.0).max()
    eps = float(max(eps_r, eps_c))
    C_A = stability_constant_CA(A, margins)
    eps_max = eps_max_from_CA(C_A)
    result = sinkhorn_scale(ScalingProblem(A, margins), tol=tol, max_iter=max_iter)
    zeros = Potentials(np.zeros(margins.m), np.zeros(margins.n))
    actual = gauge_distance(result.potentials, zeros)
    bound = 4.0 * C_A * eps
    return PotentialStabilityReport(
        eps=eps, eps_max=eps_max, rho_A=row_alignment(A), C_A=C_A,
        bound=bound, actual=actual,
        holds=bool(actual <= bound * (1.0 + 1e-9) + 1e-12),
        within_eps_max=bool(eps <= eps_max),
    )


# ---------------------------------------------------------------------------
# discrete bridge-stability right-hand sides
# ---------------------------------------------------------------------------

def hellinger_discrete(P: np.ndarray, Q: np.ndarray) -> float:
    """Hellinger distance of probability arrays (counting base measure).

    Numerically identical to embedding both on the unit square/interval as
    piecewise-constant densities and applying :func:`measures.hellinger`.
    """
    d = np.sqrt(P) - np.sqrt(Q)
    return float(np.sqrt(np.sum(d * d)))


def discrete_cost(R: np.ndarray, rho_r: np.ndarray, rho_c: np.ndarray) -> np.ndarray:
    """Cost kappa_ij = -log(R_ij / (rho_r_i rho_c_j)) over positive product cells."""
    prod = np.outer(rho_r, rho_c)
    mask = prod > 0
    if np.any(mask & (np.asarray(R) <= 0)):
        raise UnboundedCost("reference vanishes on a cell of positive product measure")
    kappa = np.zeros_like(prod)
    kappa[mask] = -np.log(R[mask] / prod[mask])
    return kappa


def kernel_stability_rhs(R: np.ndarray, R_prime: np.ndarray,
                         rho_r: np.ndarray, rho_c: np.ndarray) -> float:
    """exp(3/2 max(||kappa^+||, ||kappa'^+||)) * d_H(R, R') for fixed margins."""
    k1 = discrete_cost(R, rho_r, rho_c)
    k2 = discrete_cost(R_prime, rho_r, rho_c)
    kp = max(k1.max(initial=0.0), k2.max(initial=0.0), 0.0)
    return float(np.exp(1.5 * kp) * hellinger_discrete(R, R_prime))


def margin_stability_rhs(R: np.ndarray, rho_r: np.ndarray, rho_c: np.ndarray,
                         rho_r_prime: np.ndarray, rho_c_prime: np.ndarray) -> float:
    """4 (||kappa|| v ||kappa'||) (||rho_r - rho_r'||_1 + ||rho_c - rho_c'||_1).

    Bounds the *squared* Hellinger distance of the bridges sharing the
    reference R under the two margin pairs.
    """
    k1 = np.abs(discrete_cost(R, rho_r, rho_c)).max()
    k2 = np.abs(discrete_cost(R, rho_r_prime, rho_c_prime)).max()
    l1 = np.abs(rho_r - rho_r_prime).sum() + np.abs(rho_c - rho_c_prime).sum()
    return float(4.0 * max(k1, k2) * l1)


def total_stability_rhs(R: np.ndarray, rho_r: np.ndarray, rho_c: np.ndarray,
                        R_prime: np.ndarray, rho_r_prime: np.ndarray,
                        rho_c_prime: np.ndarray) -> float:
    """Combined bound for simultaneous kernel and margin perturbation.

    8 (||kappa|| + M) (L1 margin gap) + 4 exp(3 max(||kappa|| + M, ||kappa'||)) d_H(R, R')^2,
    with M the sup |log| ratio of the two product marginals.
    """
    prod = np.outer(rho_r, rho_c)
    prod_p = np.outer(rho_r_prime, rho_c_prime)
    if (prod <= 0).any() or (prod_p <= 0).any():
        raise UnboundedCost("total stability needs strictly positive margins")
    M = float(np.abs(np.log(prod / prod_p)).max())
    k1 = np.abs(discrete_cost(R, rho_r, rho_c)).max()
    k2 = np.abs(discrete_cost(R_prime, rho_r_prime, rho_c_prime)).max()
    l1 = np.abs(rho_r - rho_r_prime).sum() + np.abs(rho_c - rho_c_prime).sum()
    dh2 = hellinger_discrete(R, R_prime) ** 2
    return float(8.0 * (k1 + M) * l1 + 4.0 * np.exp(3.0 * max(k1 + M, k2)) * dh2)


def _density_smoothness(rho: GridDensity1D) -> float:
    v = rho.values
    return float(min(v.min(), 1.0 / v.max()))


def deterministic_limit_rhs(rho_r_k: GridDensity1D, rho_c_k: GridDensity1D,
                            R_k: GridDensity2D,
                            rho_r: GridDensity1D, rho_c: GridDensity1D,
                            R_lim: GridDensity2D,
                            K: float | None = None,
                            delta: float | None = None) -> float:
    """8 (K + 4 log(1/delta)) (margin L1 gaps) + 4 e^{3K} delta^-12 d_H(R_k, R)^2.

    All densities must already live on a common grid.  K defaults to the
    larger of the two instances' sup-|log| cost bounds, delta to the smaller
    of their margin smoothness parameters.
    """
    if K is None:
        k1 = np.abs(discrete_cost(R_k.values, rho_r_k.values, rho_c_k.values)).max()
        k2 = np.abs(discrete_cost(R_lim.values, rho_r.values, rho_c.values)).max()
        K = float(max(k1, k2))
    if delta is None:
        delta = min(_density_smoothness(rho_r_k), _density_smoothness(rho_c_k),
                    _density_smoothness(rho_r), _density_smoothness(rho_c))
    l1 = l1_density_distance(rho_r_k, rho_r) + l1_density_distance(rho_c_k, rho_c)
    dh2 = hellinger(R_k, R_lim) ** 2
    return float(8.0 * (K + 4.0 * math.log(1.0 / delta)) * l1
                 + 4.0 * math.exp(3.0 * K) * delta ** -12 * dh2)


@dataclass(frozen=True)
class ScalabilityBound:
    bound_subset: float
    bound_exponential: float
    threshold_ok: bool


def scalability_probability_bound(margins: MarginPair, p0: float,
                                  gamma: float | None = None,
                                  eta: float = 1.0) -> ScalabilityBound:
    """Evaluate 2^{m+n-2} p0^{delta^3 (m^n)/2} and its exponential refinement.

    The refined bound (1/4) exp(-eta delta^3 (m^n)/2) is only valid when p0
    clears the threshold exp(-(2 log 2 / delta^3)(1 + 1/gamma) - eta); the
    returned flag records whether it does.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    delta = delta_smoothness(margins)
    m, n = margins.m, margins.n
    small = min(m, n)
    if gamma is None:
        gamma = small / max(m, n)
    bound1 = 0.0 if p0 == 0.0 else float(2.0 ** (m + n - 2) * p0 ** (delta**3 * small / 2.0))
    threshold = math.exp(-(2.0 * math.log(2.0) / delta**3) * (1.0 + 1.0 / gamma) - eta)
    bound_exp = 0.25 * math.exp(-eta * delta**3 * small / 2.0)
    return ScalabilityBound(bound1, bound_exp, bool(p0 <= threshold))


# ---------------------------------------------------------------------------
# Monte Carlo verifiers
# ---------------------------------------------------------------------------

def _random_probability_vector(rng, k):
    v = rng.uniform(0.2, 2.0, k)
    return v / v.sum()


def _random_probability_matrix(rng, m, n):
    v = rng.uniform(0.2, 2.0, (m, n))
    return v / v.sum()


def _perturb_simplex(rng, v, strength):
    w = v * (1.0 + strength * rng.uniform(-1.0, 1.0, v.shape))
    return w / w.sum()


def _bridge(R, rho_r, rho_c, tol):
    problem = ScalingProblem(R, MarginPair(rho_r, rho_c))
    return sinkhorn_scale(problem, tol=tol, max_iter=200_000).rescaled


def run_stability_inequality_suite(n_instances: int, seed: int = 0,
                                   size_range: tuple[int, int] = (4, 12),
                                   perturbation: float = 0.3,
                                   tol: float = 1e-12) -> dict:
    """Verify the three bridge-stability inequalities on random instances.

    Per instance: a random positive probability reference on a random
    m x n grid (entries uniform in [0.2, 2], normalized), random positive
    margins, and multiplicative perturbations of each.  The four bridges
    are computed by Sinkhorn at ``tol`` and each inequality's LHS is compared
    against its evaluator RHS.  Records follow the
    {instance_id, lhs, rhs, holds, seed} schema.
    """
    records = []
    violations = {"kernel": 0, "margin": 0, "total": 0}
    slack = 1e-9
    for i in range(n_instances):
        rng = derive_rng(seed, i)
        m = int(rng.integers(size_range[0], size_range[1] + 1))
        n = int(rng.integers(size_range[0], size_range[1] + 1))
        R = _random_probability_matrix(rng, m, n)
        Rp = _perturb_simplex(rng, R, perturbation)
        rho_r = _random_probability_vector(rng, m)
        rho_c = _random_probability_vector(rng, n)
        rho_rp = _perturb_simplex(rng, rho_r, perturbation)
        rho_cp = _perturb_simplex(rng, rho_c, perturbation)

        pi = _bridge(R, rho_r, rho_c, tol)
        pi_kernel = _bridge(Rp, rho_r, rho_c, tol)
        pi_margin = _bridge(R, rho_rp, rho_cp, tol)
        pi_total = _bridge(Rp, rho_rp, rho_cp, tol)

        cases = {
            "kernel": (hellinger_discrete(pi, pi_kernel),
                       kernel_stability_rhs(R, Rp, rho_r, rho_c)),
            "margin": (hellinger_discrete(pi, pi_margin) ** 2,
                       margin_stability_rhs(R, rho_r, rho_c, rho_rp, rho_cp)),
            "total": (hellinger_discrete(pi, pi_total) ** 2,
                      total_stability_rhs(R, rho_r, rho_c, Rp, rho_rp, rho_cp)),
        }
        for name, (lhs, rhs) in cases.items():
            holds = bool(lhs <= rhs * (1.0 + slack) + 1e-12)
            if not holds:
                violations[name] += 1
            records.append({"instance_id": i, "inequality": name,
                            "lhs": lhs, "rhs": rhs, "holds": holds, "seed": seed})
    return {"instances": n_instances, "seed": seed, "violations": violations,
            "records": records}


def run_potential_stability_suite(n_instances: int, seed: int = 0,
                                  size_range: tuple[int, int] = (4, 12),
                                  tol: float = 1e-12) -> dict:
    """Monte Carlo check of the potential-stability bound on perturbed instances.

    Each instance starts from an exactly scaled positive matrix (targets are
    its own margins) and applies independent row/column factors within
    eps_max/2, so the precondition eps <= eps_max holds; the
    report counts violations of actual <= 4 C_A eps.
    """
    records = []
    violations = 0
    skipped = 0
    for i in range(n_instances):
        rng = derive_rng(seed, i)
        m = int(rng.integers(size_range[0], size_range[1] + 1))
        n = int(rng.integers(size_range[0], size_range[1] + 1))
        M = rng.uniform(0.2, 2.0, (m, n))
        margins = MarginPair(M.sum(axis=1), M.sum(axis=0))
        # (1+q)^2 - 1 < eps_max/2 keeps the combined row/column factors well
        # inside the eps_max precondition
        q = eps_max_from_CA(stability_constant_CA(M, margins)) / 4.0
        A = M * (1.0 + rng.uniform(-q, q, m))[:, None] * (1.0 + rng.uniform(-q, q, n))[None, :]
        report = potential_stability_check(A, margins, tol=tol)
        if not report.within_eps_max:
            skipped += 1
            continue
        if not report.holds:
            violations += 1
        records.append({"instance_id": i, "lhs": report.actual, "rhs": report.bound,
                        "holds": report.holds, "seed": seed})
    return {"instances": n_instances, "seed": seed, "violations": violations,
            "skipped_precondition": skipped, "records": records}
