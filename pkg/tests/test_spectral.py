import math

import numpy as np
import pytest
from scipy.integrate import quad

from sinkbridge.ensembles import EntryKind, sample_matrix, variance_of
from sinkbridge.errors import FlatnessViolated
from sinkbridge.rng import derive_rng
from sinkbridge.scaling import MarginPair, Potentials, ScalingProblem, sinkhorn_scale
from sinkbridge.spectral import (
    DysonSolution,
    FluctuationPair,
    classical_locations,
    covariance_deviation,
    flatness_smax,
    fluctuation_matrices,
    gram_eigenvalues,
    mp_cdf,
    mp_density,
    rigidity_report,
    singular_pushforward,
    solve_dyson,
    variance_profile,
)

MP_MEDIAN = 0.6527759416335704  # root of mp_cdf(tau) = 1/2 (closed-form CDF)


def mp_rect_density(x, ratio, sigma2=1.0):
    """Closed-form eigenvalue density for an m x n Gram matrix with iid
    entries, ratio = m/n <= 1, sigma2 = n * Var: the classical MP law."""
    x = np.asarray(x, dtype=float)
    a = sigma2 * (1 - math.sqrt(ratio)) ** 2
    b = sigma2 * (1 + math.sqrt(ratio)) ** 2
    out = np.zeros_like(x)
    inside = (x > a) & (x < b)
    xi = x[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2 * np.pi * ratio * xi * sigma2)
    return out


class TestFlatness:
    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        pot = Potentials(rng.normal(size=5), rng.normal(size=7))
        var = rng.uniform(0.5, 2.0, (5, 7))
        brute = max(
            math.exp(2 * pot.alpha[i] + 2 * pot.beta[j]) * var[i, j]
            for i in range(5) for j in range(7)
        )
        assert flatness_smax(pot, var) == pytest.approx(brute, rel=1e-12)

    def test_homogeneous_closed_form(self):
        n, lam_val, a = 8, 0.7, 2.1
        lam = np.full((n, n), lam_val)
        margins = MarginPair(np.full(n, a), np.full(n, a))
        pot = sinkhorn_scale(ScalingProblem(lam, margins), tol=1e-13).potentials
        s_max = flatness_smax(pot, np.full((n, n), lam_val))
        assert s_max == pytest.approx(a**2 / (n**2 * lam_val), rel=1e-9)

    def test_zero_potentials(self):
        pot = Potentials(np.zeros(3), np.zeros(4))
        assert flatness_smax(pot, np.full((3, 4), 0.3)) == pytest.approx(0.3)


class TestFluctuationMatrices:
    def test_zero_noise(self):
        lam = np.full((3, 4), 1.0)
        pot = Potentials(np.zeros(3), np.zeros(4))
        pair = fluctuation_matrices(lam, lam, pot, pot, 1.0)
        assert np.all(pair.A == 0.0) and np.all(pair.A_check == 0.0)

    def test_equal_potentials_collapse(self):
        rng = np.random.default_rng(1)
        lam = rng.uniform(0.5, 2.0, (4, 5))
        X = rng.poisson(lam).astype(float)
        pot = Potentials(rng.normal(size=4), rng.normal(size=5))
        pair = fluctuation_matrices(X, lam, pot, pot, 0.7)
        np.testing.assert_array_equal(pair.A, pair.A_check)

    def test_difference_identity(self):
        # A - A_check is the prefactored difference of diagonal conjugations
        rng = np.random.default_rng(2)
        lam = rng.uniform(0.5, 2.0, (4, 5))
        X = rng.poisson(lam).astype(float)
        pm = Potentials(rng.normal(size=4) * 0.1, rng.normal(size=5) * 0.1)
        px = Potentials(pm.alpha + rng.normal(size=4) * 0.01,
                        pm.beta + rng.normal(size=5) * 0.01)
        s_max = 0.9
        pair = fluctuation_matrices(X, lam, px, pm, s_max)
        pref = 1.0 / math.sqrt(5 * s_max)
        direct = pref * (np.exp(px.alpha)[:, None] * (X - lam) * np.exp(px.beta)[None, :]
                         - np.exp(pm.alpha)[:, None] * (X - lam) * np.exp(pm.beta)[None, :])
        np.testing.assert_allclose(pair.A - pair.A_check, direct, atol=1e-14)


class TestVarianceProfile:
    def test_homogeneous_flat(self):
        n, lam_val, a = 6, 0.5, 1.8
        lam = np.full((n, n), lam_val)
        margins = MarginPair(np.full(n, a), np.full(n, a))
        pot = sinkhorn_scale(ScalingProblem(lam, margins), tol=1e-13).potentials
        var = np.full((n, n), lam_val)
        s_max = flatness_smax(pot, var)
        prof = variance_profile(pot, var, s_max)
        np.testing.assert_allclose(prof.S, 1.0 / n, rtol=1e-9)

    def test_argmax_entry_saturates_cap(self):
        rng = np.random.default_rng(3)
        pot = Potentials(rng.normal(size=4) * 0.2, rng.normal(size=6) * 0.2)
        var = rng.uniform(0.5, 2.0, (4, 6))
        s_max = flatness_smax(pot, var)
        prof = variance_profile(pot, var, s_max)
        assert prof.S.max() == pytest.approx(1.0 / 6, rel=1e-12)

    def test_flatness_violation_detected(self):
        pot = Potentials(np.zeros(3), np.zeros(3))
        var = np.full((3, 3), 1.0)
        with pytest.raises(FlatnessViolated):
            variance_profile(pot, var, 0.5)  # true s_max is 1.0

    def test_empirical_variance_matches(self):
        rng = derive_rng(4)
        lam = rng.uniform(1.0, 4.0, (4, 5))
        margins = MarginPair(lam.sum(1) * 1.1, lam.sum(0) * 1.1)
        pot = sinkhorn_scale(ScalingProblem(lam, margins), tol=1e-13).potentials
        var = variance_of(EntryKind.POISSON, lam)
        s_max = flatness_smax(pot, var)
        prof = variance_profile(pot, var, s_max)
        draws = sample_matrix(np.broadcast_to(lam, (10_000, 4, 5)), EntryKind.POISSON, rng)
        pref = 1.0 / math.sqrt(5 * s_max)
        checks = pref * np.exp(pot.alpha)[None, :, None] * (draws - lam) \
            * np.exp(pot.beta)[None, None, :]
        emp = checks.var(axis=0, ddof=1)
        assert np.abs(emp / prof.S - 1.0).max() <= 0.08


class TestDysonSolver:
    def test_homogeneous_matches_mp(self):
        n = 200
        sol = solve_dyson(np.full((n, n), 1.0 / n))
        assert sol.converged
        mask = (sol.grid >= 0.05) & (sol.grid <= 3.95)
        sup = np.abs(sol.density[mask] - mp_density(sol.grid[mask])).max()
        assert sup <= 5e-3
        assert sol.atom == 0.0
        assert abs(sol.mass() - 1.0) <= 2e-2

    def test_rectangular_matches_mp_with_ratio(self):
        m, n = 150, 300
        sol = solve_dyson(np.full((m, n), 1.0 / n))
        assert sol.converged and sol.atom == 0.0
        expect = mp_rect_density(sol.grid, ratio=m / n, sigma2=1.0)
        interior = (sol.grid > 0.2) & (sol.grid < 2.7)
        assert np.abs(sol.density[interior] - expect[interior]).max() <= 5e-3

    def test_tall_matrix_atom(self):
        m, n = 300, 150
        sol = solve_dyson(np.full((m, n), 1.0 / m))
        assert sol.atom == pytest.approx(0.5)
        expect = 0.5 * mp_rect_density(sol.grid, ratio=n / m, sigma2=1.0)
        interior = (sol.grid > 0.2) & (sol.grid < 2.7)
        assert np.abs(sol.density[interior] - expect[interior]).max() <= 5e-3
        assert abs(sol.mass() - 1.0) <= 2e-2

    def test_large_z_resolvent_asymptotics(self):
        n = 50
        sol = solve_dyson(np.full((n, n), 1.0 / n), grid=np.array([50.0]),
                          eta_ladder=(1.0,), tol=1e-12)
        z = 50.0 + 1.0j
        assert abs(sol.stieltjes[0] + 1.0 / z) <= 2.0 / abs(z) ** 2

    def test_upper_half_plane_and_rows(self):
        rng = np.random.default_rng(5)
        S = rng.uniform(0.2, 1.0, (12, 15))
        S /= S.max() * 15
        sol = solve_dyson(S, grid=np.linspace(0.1, 4.0, 40))
        assert (sol.stieltjes_rows.imag > 0).all()
        assert sol.stieltjes_rows.shape == (12, 40)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        S = rng.uniform(0.2, 1.0, (10, 12))
        S /= S.max() * 12
        grid = np.linspace(0.2, 3.8, 25)
        sol = solve_dyson(S, grid=grid)
        pi, pj = rng.permutation(10), rng.permutation(12)
        sol_p = solve_dyson(S[np.ix_(pi, pj)], grid=grid)
        np.testing.assert_allclose(sol_p.stieltjes_rows, sol.stieltjes_rows[pi],
                                   atol=1e-7)
        np.testing.assert_allclose(sol_p.density, sol.density, atol=1e-8)

    def test_non_convergence_flagged(self):
        n = 40
        sol = solve_dyson(np.full((n, n), 1.0 / n), max_iter=2)
        assert not sol.converged

    def test_ladder_validation(self):
        S = np.full((4, 4), 0.25)
        with pytest.raises(ValueError):
            solve_dyson(S, eta_ladder=(0.1, 0.3))
        with pytest.raises(ValueError):
            solve_dyson(S, eta_ladder=(0.1, 1e-6))
        with pytest.raises(ValueError):
            solve_dyson(S, grid=np.array([-1.0, 1.0]))


class TestMPForms:
    def test_pointwise_values(self):
        assert mp_density(4.0) == 0.0
        assert mp_density(4.5) == 0.0
        assert mp_density(2.0) == pytest.approx(1.0 / (2.0 * np.pi))

    def test_mass_by_quadrature(self):
        val, err = quad(lambda t: mp_density(t), 0, 4)
        assert abs(val - 1.0) <= 1e-6

    def test_cdf_consistency(self):
        assert mp_cdf(0.0) == 0.0
        assert mp_cdf(4.0) == pytest.approx(1.0)
        assert mp_cdf(MP_MEDIAN) == pytest.approx(0.5, abs=1e-12)
        # CDF derivative equals the density (finite differences)
        taus = np.linspace(0.2, 3.8, 19)
        h = 1e-6
        deriv = (mp_cdf(taus + h) - mp_cdf(taus - h)) / (2 * h)
        np.testing.assert_allclose(deriv, mp_density(taus), atol=1e-6)


class TestGramEigenvalues:
    def test_identity(self):
        np.testing.assert_allclose(gram_eigenvalues(np.eye(3)), 1.0)

    def test_diagonal(self):
        np.testing.assert_allclose(gram_eigenvalues(np.diag([1.0, 2.0])), [1.0, 4.0])

    def test_svd_cross_check(self):
        rng = np.random.default_rng(7)
        for shape in [(5, 7), (300, 400)]:
            A = rng.normal(size=shape)
            eigs = gram_eigenvalues(A)
            sv2 = np.sort(np.linalg.svd(A, compute_uv=False) ** 2)
            np.testing.assert_allclose(eigs, sv2, rtol=1e-8, atol=1e-10)

    def test_nonnegative_clamp(self):
        eigs = gram_eigenvalues(np.zeros((3, 4)))
        assert (eigs == 0.0).all()


class TestClassicalLocations:
    def test_beyond_support_saturates(self):
        n = 100
        sol = solve_dyson(np.full((n, n), 1.0 / n))
        locs = classical_locations(sol, n)
        assert locs[-1] == n
        assert locs[sol.grid > 4.05].min() == n

    def test_mp_median_hits_middle(self):
        n = 200
        sol = solve_dyson(np.full((n, n), 1.0 / n))
        k = int(np.argmin(np.abs(sol.grid - MP_MEDIAN)))
        assert abs(classical_locations(sol, n)[k] - n // 2) <= 2

    def test_atom_floor(self):
        sol = solve_dyson(np.full((120, 60), 1.0 / 120))
        locs = classical_locations(sol, 120)
        assert locs[0] >= math.ceil(120 * sol.atom)


class TestRigidity:
    def _sol(self, n=150):
        return solve_dyson(np.full((n, n), 1.0 / n))

    def test_synthetic_exact_locations(self):
        n = 150
        sol = self._sol(n)
        locs = classical_locations(sol, n)
        eigs = np.zeros(n)
        mask = sol.density >= 0.05
        # place one eigenvalue exactly at each checked classical location
        eigs_sorted = np.sort(np.interp(
            (np.arange(1, n + 1) - 0.5) / n,
            np.concatenate([[0.0], sol.cumulative()]),
            np.concatenate([[0.0], sol.grid])))
        rep = rigidity_report(eigs_sorted, sol, eps=0.5, Delta=0.0, eps_star=0.05,
                              eps_cov=0.0, square=True)
        assert rep.violations == 0

    def test_single_shift_detected(self):
        # constructed solution with uniform density, so the level spacing
        # (1/(m rho) = 0.1) brackets a hand-picked bound of 0.075: quantile
        # placement stays within half a spacing, a 2x-bound shift cannot be
        # absorbed by re-sorting
        m = 40
        grid = np.linspace(0.05, 4.0, 80)
        rho = 1.0 / 4.05  # flat density with exactly unit mass incl. left closure
        sol = DysonSolution(grid=grid, density=np.full(80, rho), atom=0.0,
                            stieltjes=np.zeros(80, dtype=complex),
                            stieltjes_rows=np.zeros((m, 80), dtype=complex),
                            eta_final=1e-4, converged=True, shape=(m, m))
        eps = math.log(3.0) / math.log(m)  # m^eps / m = 0.075
        quantiles = np.interp((np.arange(1, m + 1) - 0.5) / m,
                              np.concatenate([[0.0], sol.cumulative()]),
                              np.concatenate([[0.0], sol.grid]))
        rep0 = rigidity_report(quantiles, sol, eps, 0.0, 0.05, 0.0, square=False)
        assert rep0.violations == 0
        bound = m**eps / m
        eigs_bad = quantiles.copy()
        eigs_bad[m // 2] += 2.0 * bound
        rep1 = rigidity_report(eigs_bad, sol, eps, 0.0, 0.05, 0.0, square=False)
        assert rep1.violations >= 1

    def test_outlier_eigenvalue_counted(self):
        n = 150
        sol = self._sol(n)
        quantiles = np.interp((np.arange(1, n + 1) - 0.5) / n,
                              np.concatenate([[0.0], sol.cumulative()]),
                              np.concatenate([[0.0], sol.grid]))
        rep0 = rigidity_report(quantiles, sol, 0.5, 0.0, 0.05, 0.0, square=True)
        assert rep0.outside_support == 0
        eigs_bad = quantiles.copy()
        eigs_bad[-1] += 0.5  # past the support edge by more than eps_star
        rep1 = rigidity_report(eigs_bad, sol, 0.5, 0.0, 0.05, 0.0, square=True)
        assert rep1.outside_support >= 1

    def test_no_outliers_at_moderate_size(self):
        n = 500
        lam = np.full((n, n), 2.0)
        margins = MarginPair(np.full(n, 0.3 * n), np.full(n, 0.3 * n))
        pot = sinkhorn_scale(ScalingProblem(lam, margins), tol=1e-12).potentials
        var = variance_of(EntryKind.POISSON, lam)
        s_max = flatness_smax(pot, var)
        sol = solve_dyson(variance_profile(pot, var, s_max))
        outside = 0
        for trial in range(3):
            X = sample_matrix(lam, EntryKind.POISSON, 123, trial)
            res = sinkhorn_scale(ScalingProblem(X, margins), tol=1e-10)
            pair = fluctuation_matrices(X, lam, res.potentials, pot, s_max)
            rep = rigidity_report(gram_eigenvalues(pair.A), sol, 0.5, 0.05, 0.05,
                                  0.0, square=True)
            outside += rep.outside_support
        assert outside == 0


class TestSingularPushforward:
    def test_mp_gives_quarter_circle(self):
        taus = np.linspace(0.01, 4.0, 500)
        s, fs = singular_pushforward(taus, mp_density(taus))
        expect = np.sqrt(np.maximum(4.0 - s**2, 0.0)) / np.pi
        np.testing.assert_allclose(fs, expect, atol=1e-12)

    def test_mass_conserved(self):
        # s = sqrt(tau) removes the hard-edge singularity, so the trapezoid
        # rule plus the [0, s_1] rectangle recovers the full bulk mass
        n = 200
        sol = solve_dyson(np.full((n, n), 1.0 / n))
        s, fs = singular_pushforward(sol.grid, sol.density)
        mass_s = np.trapezoid(fs, s) + s[0] * fs[0]
        assert abs(mass_s - (1.0 - sol.atom)) <= 1e-3

    def test_point_mass_moves_to_sqrt(self):
        grid = np.linspace(0.5, 1.5, 101)
        density = np.exp(-((grid - 1.0) / 0.01) ** 2)
        density /= np.trapezoid(density, grid)
        s, fs = singular_pushforward(grid, density)
        assert s[np.argmax(fs)] == pytest.approx(1.0, abs=0.01)
        assert np.trapezoid(fs, s) == pytest.approx(1.0, abs=1e-3)


class TestCovarianceDeviation:
    def test_identical_is_zero(self):
        A = np.random.default_rng(8).normal(size=(4, 6))
        assert covariance_deviation(FluctuationPair(A, A.copy())) == 0.0

    def test_rank_one_norm(self):
        u, v = np.array([3.0, 4.0]), np.array([1.0, 2.0, 2.0])
        A = np.outer(u, v)
        pair = FluctuationPair(A, np.zeros_like(A))
        expect = (u @ u) * (v @ v)
        assert covariance_deviation(pair) == pytest.approx(expect, rel=1e-12)
