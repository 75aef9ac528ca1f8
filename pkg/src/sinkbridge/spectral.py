"""Fluctuation matrices, variance profiles, the Dyson-equation solver with
Stieltjes inversion, and spectral rigidity diagnostics.

Normalization: fluctuation matrices are scaled by ((m v n) * s_max)^{-1/2},
where s_max is the flatness parameter sup e^{2 alpha_i + 2 beta_j} Var(X_ij)
built from the deterministic potentials.  The resulting variance profile
satisfies S_ij <= 1/(m v n), the Dyson solution is supported in [0, 4], and
the homogeneous square case reduces exactly to the Marchenko-Pastur
eigenvalue law sqrt(4 - tau) / (2 pi sqrt(tau)) on (0, 4].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EigensolverFailure, FlatnessViolated, LeftHalfPlane
from .scaling import Potentials

__all__ = [
    "VarianceProfile",
    "FluctuationPair",
    "DysonSolution",
    "RigidityReport",
    "DEFAULT_GRID_POINTS",
    "DEFAULT_GRID_MAX",
    "DEFAULT_ETA_LADDER",
    "flatness_smax",
    "fluctuation_matrices",
    "variance_profile",
    "solve_dyson",
    "mp_density",
    "mp_cdf",
    "gram_eigenvalues",
    "classical_locations",
    "rigidity_report",
    "singular_pushforward",
    "covariance_deviation",
]

DEFAULT_GRID_POINTS = 400
DEFAULT_GRID_MAX = 4.2  # extends past the support edge to expose outliers
DEFAULT_ETA_LADDER = (1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4)
_DAMPING = 0.5


@dataclass(frozen=True)
class VarianceProfile:
    """Per-entry variances of the comparison fluctuation matrix."""

    S: np.ndarray
    s_max: float

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        object.__setattr__(self, "S", S)
        m, n = S.shape
        cap = 1.0 / max(m, n)
        if (S <= 0).any():
            raise ValueError("variance profile must be strictly positive")
        if S.max() > cap * (1.0 + 1e-9) + 1e-12:
            raise FlatnessViolated(
                f"profile max {S.max():.3e} exceeds flatness cap {cap:.3e}"
            )

    @property
    def shape(self):
        return self.S.shape


@dataclass(frozen=True)
class FluctuationPair:
    """Rescaled fluctuation matrix (random potentials) and its comparison
    counterpart (deterministic potentials), sharing one prefactor."""

    A: np.ndarray
    A_check: np.ndarray


@dataclass(frozen=True)
class DysonSolution:
    grid: np.ndarray           # energies tau, increasing, > 0
    density: np.ndarray        # Im mbar(tau + i eta_final) / pi
    atom: float                # mass at zero: max(0, 1 - n/m)
    stieltjes: np.ndarray      # averaged transform at tau + i eta_final
    stieltjes_rows: np.ndarray  # per-row solution m_i(tau + i eta_final), (m, grid)
    eta_final: float
    converged: bool
    shape: tuple[int, int]

    def mass(self) -> float:
        """atom + integral of the density, with a sqrt-singularity-aware
        closure for the cell left of the first grid point."""
        return float(self.atom + np.trapezoid(self.density, self.grid)
                     + 2.0 * self.grid[0] * self.density[0])

    def cumulative(self) -> np.ndarray:
        """F(tau_k) = atom + integral of the density up to tau_k."""
        incr = np.concatenate([
            [2.0 * self.grid[0] * self.density[0]],
            0.5 * np.diff(self.grid) * (self.density[1:] + self.density[:-1]),
        ])
        return self.atom + np.cumsum(incr)

    def support_points(self, density_cutoff: float = 1e-3) -> np.ndarray:
        pts = self.grid[self.density >= density_cutoff]
        if self.atom > 0:
            pts = np.concatenate([[0.0], pts])
        return pts


def flatness_smax(pot: Potentials, var: np.ndarray) -> float:
    """sup over (i, j) of e^{2 alpha_i + 2 beta_j} Var_ij."""
    var = np.asarray(var, dtype=float)
    if (var <= 0).any():
        raise ValueError("variances must be positive")
    return float(_scaled_var(pot, var).max())


def _scaled_var(pot: Potentials, var: np.ndarray) -> np.ndarray:
    return np.exp(2.0 * pot.alpha)[:, None] * var * np.exp(2.0 * pot.beta)[None, :]


def fluctuation_matrices(X: np.ndarray, lam: np.ndarray, pot_X: Potentials,
                         pot_mean: Potentials, s_max: float) -> FluctuationPair:
    """A and A-check: diag(e^alpha) (X - lam) diag(e^beta) / sqrt((m v n) s_max)."""
    X = np.asarray(X, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if X.shape != lam.shape:
        raise ValueError("X and lam shapes differ")
    if s_max <= 0:
        raise ValueError("s_max must be positive")
    m, n = X.shape
    pref = 1.0 / math.sqrt(max(m, n) * s_max)
    centered = X - lam
    A = pref * np.exp(pot_X.alpha)[:, None] * centered * np.exp(pot_X.beta)[None, :]
    Ac = pref * np.exp(pot_mean.alpha)[:, None] * centered * np.exp(pot_mean.beta)[None, :]
    return FluctuationPair(A, Ac)


def variance_profile(pot_mean: Potentials, var: np.ndarray, s_max: float) -> VarianceProfile:
    """S_ij = e^{2 alpha_i + 2 beta_j} Var_ij / ((m v n) s_max)."""
    var = np.asarray(var, dtype=float)
    m, n = var.shape
    S = _scaled_var(pot_mean, var) / (max(m, n) * s_max)
    return VarianceProfile(S, float(s_max))


def _real_complex_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """A @ B for real A and complex B via one real GEMM on the interleaved view."""
    Bv = np.ascontiguousarray(B).view(np.float64).reshape(B.shape[0], 2 * B.shape[1])
    out = A @ Bv
    return out.view(np.complex128).reshape(A.shape[0], B.shape[1])


def solve_dyson(S, grid: np.ndarray | None = None,
                eta_ladder=None, tol: float = 1e-9,
                max_iter: int = 5000) -> DysonSolution:
    """Solve the self-consistent Stieltjes system for the Gram spectrum.

    For each z = tau + i eta the m-vector fixed point
        m_i = -1 / (z - sum_k S_ik / (1 + sum_j S_jk m_j))
    is iterated with damping 0.5 from m_i = -1/z, descending the eta ladder
    with warm starts; grid points are processed jointly with converged
    columns masked out.  Intermediate rungs converge to max(tol, 1e-7);
    the final rung to tol.  The density is the Stieltjes inversion
    Im mbar / pi at the final eta, and the atom at zero is the analytic
    max(0, 1 - n/m).  Non-convergence is flagged, never silently accepted.
    """
    if isinstance(S, VarianceProfile):
        S = S.S
    S = np.ascontiguousarray(S, dtype=np.float64)
    m, n = S.shape
    if grid is None:
        grid = np.linspace(DEFAULT_GRID_MAX / DEFAULT_GRID_POINTS, DEFAULT_GRID_MAX,
                           DEFAULT_GRID_POINTS)
    grid = np.asarray(grid, dtype=float)
    if (grid <= 0).any():
        raise ValueError("grid must be strictly positive")
    if eta_ladder is None:
        eta_ladder = DEFAULT_ETA_LADDER
    eta_ladder = tuple(float(e) for e in eta_ladder)
    if any(b >= a for a, b in zip(eta_ladder, eta_ladder[1:])):
        raise ValueError("eta ladder must be strictly decreasing")
    if eta_ladder[-1] < 1e-5:
        raise ValueError("final eta must be >= 1e-5")

    ST = np.ascontiguousarray(S.T)
    G = grid.size
    mm = np.full((m, G), 0j)
    converged_all = True
    for rung, eta in enumerate(eta_ladder):
        z = grid + 1j * eta
        if rung == 0:
            mm = -1.0 / np.broadcast_to(z, (m, G)).copy()
        rung_tol = tol if rung == len(eta_ladder) - 1 else max(tol, 1e-7)
        active = np.arange(G)
        cur = mm[:, active].copy()
        for _ in range(max_iter):
            w = _real_complex_matmul(ST, cur)
            f = _real_complex_matmul(S, 1.0 / (1.0 + w))
            new = -1.0 / (z[active] - f)
            stepped = (1.0 - _DAMPING) * cur + _DAMPING * new
            delta = np.abs(stepped - cur).max(axis=0)
            cur = stepped
            done = delta <= rung_tol
            if done.any():
                mm[:, active[done]] = cur[:, done]
                keep = ~done
                active = active[keep]
                cur = cur[:, keep]
                if active.size == 0:
                    break
            if active.size and (cur.imag <= 0).any():
                raise LeftHalfPlane("Dyson iterate left the upper half-plane")
        if active.size:
            mm[:, active] = cur
            if rung == len(eta_ladder) - 1:
                converged_all = False

    mbar = mm.mean(axis=0)
    if (mbar.imag < -1e-12).any():
        raise LeftHalfPlane("averaged Stieltjes transform has negative imaginary part")
    density = np.maximum(mbar.imag, 0.0) / np.pi
    atom = max(0.0, 1.0 - n / m)
    return DysonSolution(grid=grid, density=density, atom=float(atom),
                         stieltjes=mbar, stieltjes_rows=mm,
                         eta_final=eta_ladder[-1], converged=converged_all,
                         shape=(m, n))


def mp_density(tau) -> np.ndarray | float:
    """Marchenko-Pastur eigenvalue density sqrt(4 - tau)/(2 pi sqrt(tau)) on (0, 4]."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    inside = (tau > 0) & (tau <= 4.0)
    t = tau[inside]
    out[inside] = np.sqrt(4.0 - t) / (2.0 * np.pi * np.sqrt(t))
    return out if out.ndim else float(out)


def mp_cdf(tau) -> np.ndarray | float:
    """Closed-form CDF of the density above: (2/pi)(theta + sin theta cos theta),
    theta = arcsin(sqrt(tau)/2)."""
    tau = np.asarray(tau, dtype=float)
    t = np.clip(tau, 0.0, 4.0)
    theta = np.arcsin(np.sqrt(t) / 2.0)
    out = (2.0 / np.pi) * (theta + np.sin(theta) * np.cos(theta))
    out = np.where(tau < 0, 0.0, np.where(tau > 4.0, 1.0, out))
    return out if out.ndim else float(out)


def gram_eigenvalues(A: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of A A^T, with tiny negative solver noise clamped."""
    A = np.asarray(A, dtype=float)
    try:
        eigs = np.linalg.eigvalsh(A @ A.T)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    floor = -1e-10 * max(1.0, float(np.abs(eigs).max(initial=0.0)))
    if (eigs < floor).any():
        raise EigensolverFailure(f"eigenvalue {eigs.min():.3e} below PSD noise floor")
    return np.maximum(eigs, 0.0)


def classical_locations(sol: DysonSolution, m: int) -> np.ndarray:
    """Index map i(tau) = ceil(m * F(tau)) per grid point, clipped to [1, m]."""
    F = sol.cumulative()
    return np.clip(np.ceil(m * F).astype(int), 1, m)


@dataclass(frozen=True)
class RigidityReport:
    max_dev_in_bulk: float
    violations: int
    outside_support: int
    n_checked: int
    grid_checked: np.ndarray = field(repr=False)
    deviations: np.ndarray = field(repr=False)
    bounds: np.ndarray = field(repr=False)


def rigidity_report(eigs: np.ndarray, sol: DysonSolution, eps: float,
                    Delta: float, eps_star: float, eps_cov: float,
                    square: bool, density_cutoff: float = 1e-3) -> RigidityReport:
    """Compare ordered eigenvalues with classical locations of the solution.

    At each grid tau in (Delta, grid max] with density >= eps_star the
    deviation |lambda_{i(tau)} - tau| is checked against m^eps / m + eps_cov
    (rectangular) or (m^eps/m)(sqrt(tau) + 1/m) + eps_cov (square).  Also
    counts eigenvalues at distance >= eps_star + eps_cov from the support.
    """
    eigs = np.sort(np.asarray(eigs, dtype=float))
    m = eigs.size
    locs = classical_locations(sol, m)
    mask = (sol.grid > Delta) & (sol.density >= eps_star)
    taus = sol.grid[mask]
    idx = locs[mask]
    devs = np.abs(eigs[idx - 1] - taus)
    base = m ** eps / m
    if square:
        bounds = base * (np.sqrt(taus) + 1.0 / m) + eps_cov
    else:
        bounds = np.full_like(taus, base + eps_cov)
    violations = int((devs > bounds).sum())

    support = sol.support_points(density_cutoff)
    if support.size:
        dist = np.abs(eigs[:, None] - support[None, :]).min(axis=1)
    else:
        dist = np.full_like(eigs, np.inf)
    outside = int((dist >= eps_star + eps_cov).sum())
    return RigidityReport(
        max_dev_in_bulk=float(devs.max(initial=0.0)),
        violations=violations, outside_support=outside,
        n_checked=int(taus.size), grid_checked=taus,
        deviations=devs, bounds=bounds,
    )


def singular_pushforward(grid_lam: np.ndarray, density_lam: np.ndarray):
    """Push an eigenvalue density through lambda -> sqrt(lambda).

    Returns (s_grid, s_density) with s = sqrt(lambda) and
    f_s(s) = 2 s f_lambda(s^2); mass is conserved by the change of variables.
    """
    grid_lam = np.asarray(grid_lam, dtype=float)
    density_lam = np.asarray(density_lam, dtype=float)
    s = np.sqrt(grid_lam)
    return s, 2.0 * s * density_lam


def covariance_deviation(pair: FluctuationPair) -> float:
    """Spectral norm of A A^T - A_check A_check^T."""
    D = pair.A @ pair.A.T - pair.A_check @ pair.A_check.T
    try:
        eigs = np.linalg.eigvalsh(D)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    return float(np.abs(eigs).max(initial=0.0))
