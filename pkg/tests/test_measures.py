import numpy as np
import pytest

from sinkbridge.errors import GridMismatch, NonPositiveTotal, ZeroEntry
from sinkbridge.measures import (
    GridDensity1D,
    GridDensity2D,
    cost_bound_K,
    delta_smoothness,
    hellinger,
    histogram_density_1d,
    integrate_test,
    kernel_density_2d,
    kl_divergence,
    l1_density_distance,
    lookup_test_function,
    total_variation,
)
from sinkbridge.scaling import MarginPair, ScalingProblem, sinkhorn_scale

from conftest import random_problem


def _random_density_1d(rng, m):
    v = rng.uniform(0.05, 2.0, m)
    return histogram_density_1d(v, v.sum())


def _random_density_2d(rng, m, n):
    v = rng.uniform(0.05, 2.0, (m, n))
    return kernel_density_2d(v, v.sum())


class TestEmbeddings:
    def test_uniform_margin_is_flat(self):
        d = histogram_density_1d(np.full(8, 3.0), 24.0)
        np.testing.assert_allclose(d.values, 1.0)
        assert d.is_probability()

    def test_point_mass(self):
        d = histogram_density_1d(np.array([5.0, 0.0, 0.0, 0.0, 0.0]), 5.0)
        np.testing.assert_allclose(d.values, [5.0, 0, 0, 0, 0])

    def test_row_block_two_level(self):
        n = 10
        r = np.where(np.arange(n) < 5, 0.1 * n, 0.5 * n)
        d = histogram_density_1d(r, r.sum())
        np.testing.assert_allclose(np.unique(d.values), [1.0 / 3.0, 5.0 / 3.0])

    def test_kernel_constant(self):
        d = kernel_density_2d(np.full((3, 5), 2.0), 30.0)
        np.testing.assert_allclose(d.values, 1.0)
        assert kernel_density_2d(np.array([[7.0]]), 7.0).values[0, 0] == 1.0

    def test_rank_one_rescaled_is_product(self):
        rng = np.random.default_rng(0)
        prob = random_problem(rng, 4, 6)
        prob = ScalingProblem(np.outer(rng.uniform(0.5, 2, 4), rng.uniform(0.5, 2, 6)),
                              prob.margins)
        res = sinkhorn_scale(prob, tol=1e-12)
        N = prob.margins.N
        d2 = kernel_density_2d(res.rescaled, N)
        rho_r = histogram_density_1d(prob.margins.r, N)
        rho_c = histogram_density_1d(prob.margins.c, N)
        np.testing.assert_allclose(d2.values, np.outer(rho_r.values, rho_c.values),
                                   atol=1e-10)

    def test_nonpositive_total(self):
        with pytest.raises(NonPositiveTotal):
            histogram_density_1d(np.ones(3), 0.0)


class TestDistances:
    def test_identical_zero(self):
        rng = np.random.default_rng(1)
        p = _random_density_2d(rng, 4, 5)
        assert hellinger(p, p) == 0.0
        assert total_variation(p, p) == 0.0
        assert kl_divergence(p, p) == 0.0

    def test_disjoint_point_masses(self):
        p = histogram_density_1d(np.array([1.0, 0.0]), 1.0)
        q = histogram_density_1d(np.array([0.0, 1.0]), 1.0)
        assert hellinger(p, q) == pytest.approx(np.sqrt(2.0))
        assert total_variation(p, q) == pytest.approx(2.0)
        assert l1_density_distance(p, q) == pytest.approx(2.0)
        assert kl_divergence(p, q) == np.inf

    def test_sandwich(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            m = rng.integers(2, 12)
            p, q = _random_density_1d(rng, m), _random_density_1d(rng, m)
            dh, dtv = hellinger(p, q), total_variation(p, q)
            assert dh**2 <= dtv + 1e-12
            assert dtv <= 2.0 * np.sqrt(2.0) * dh + 1e-12

    def test_metric_axioms(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p, q, w = (_random_density_2d(rng, 3, 4) for _ in range(3))
            assert hellinger(p, q) == hellinger(q, p)
            assert total_variation(p, q) == total_variation(q, p)
            assert hellinger(p, w) <= hellinger(p, q) + hellinger(q, w) + 1e-12
            assert total_variation(p, w) <= total_variation(p, q) + total_variation(q, w) + 1e-12

    def test_example_pair_lower_bound(self):
        # oracle closed forms for both bridge entries (ratio identity)
        s, g = 0.1, 0.01

        def entry(u):
            t = np.sqrt(u / (0.5 - u))
            return 0.5 * t / (1.0 + t)

        a, b = entry(s + g), entry(s - g)
        pi_a = np.array([[a, 0.5 - a], [0.5 - a, a]])
        pi_b = np.array([[b, 0.5 - b], [0.5 - b, b]])
        da = hellinger(kernel_density_2d(pi_a, 1.0), kernel_density_2d(pi_b, 1.0))
        assert da >= abs(np.sqrt(a) - np.sqrt(b))

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            hellinger(GridDensity1D(np.ones(3)), GridDensity1D(np.ones(4)))
        with pytest.raises(GridMismatch):
            total_variation(GridDensity2D(np.ones((2, 2))), GridDensity1D(np.ones(4)))

    def test_embedding_isometry(self):
        # Hellinger of embedded matrices equals the discrete Hellinger of the
        # normalized matrices
        rng = np.random.default_rng(4)
        P = rng.uniform(0.1, 1.0, (5, 7))
        Q = rng.uniform(0.1, 1.0, (5, 7))
        d_embed = hellinger(kernel_density_2d(P, P.sum()), kernel_density_2d(Q, Q.sum()))
        Pn, Qn = P / P.sum(), Q / Q.sum()
        d_disc = np.sqrt(((np.sqrt(Pn) - np.sqrt(Qn)) ** 2).sum())
        assert d_embed == pytest.approx(d_disc, abs=1e-12)


class TestDeltaSmoothness:
    def test_uniform_is_one(self):
        assert delta_smoothness(MarginPair(np.full(5, 2.0), np.full(4, 2.5))) == pytest.approx(1.0)

    def test_row_block(self):
        n = 10
        r = np.where(np.arange(n) < 5, 0.1 * n, 0.5 * n)
        c = np.full(n, 0.3 * n)
        # four ratio extremes evaluated directly
        N = r.sum()
        expect = min(n * r.min() / N, N / (n * r.max()), n * c.min() / N, N / (n * c.max()))
        assert expect == pytest.approx(1.0 / 3.0)
        assert delta_smoothness(MarginPair(r, c)) == pytest.approx(expect)

    def test_vanishing_entry_limit(self):
        vals = []
        for eps in (1e-2, 1e-4, 1e-6):
            r = np.array([eps, 1.0])
            c = np.full(2, r.sum() / 2)
            vals.append(delta_smoothness(MarginPair(r, c)))
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-5


class TestCostBound:
    def test_rank_one_zero(self):
        a, b = np.array([1.0, 3.0]), np.array([2.0, 5.0, 1.0])
        lam = np.outer(a, b)
        margins = MarginPair(lam.sum(1), lam.sum(0))
        assert cost_bound_K(ScalingProblem(lam, margins)) == pytest.approx(0.0, abs=1e-12)

    def test_homogeneous_zero(self):
        lam = np.full((4, 4), 0.7)
        margins = MarginPair(np.full(4, 1.2), np.full(4, 1.2))
        assert cost_bound_K(ScalingProblem(lam, margins)) == pytest.approx(0.0, abs=1e-12)

    def test_two_block_direct_max(self):
        n = 10
        r = np.where(np.arange(n) < 5, 0.1 * n, 0.5 * n).astype(float)
        c = np.full(n, 0.3 * n)
        lam = np.where(np.arange(n)[:, None] < 5, 0.2, 0.6) * np.ones((n, n))
        # brute double loop oracle
        N, mass = r.sum(), lam.sum()
        brute = max(abs(np.log(r[i] * c[j] * mass / (lam[i, j] * N**2)))
                    for i in range(n) for j in range(n))
        prob = ScalingProblem(lam, MarginPair(r, c))
        assert cost_bound_K(prob) == pytest.approx(brute, rel=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        prob = random_problem(rng, 4, 5)
        K1 = cost_bound_K(prob)
        K2 = cost_bound_K(ScalingProblem(17.3 * prob.lam, prob.margins))
        assert K1 == pytest.approx(K2, rel=1e-12)

    def test_zero_entry_rejected(self):
        lam = np.array([[1.0, 0.0], [1.0, 1.0]])
        with pytest.raises(ZeroEntry):
            cost_bound_K(ScalingProblem(lam, MarginPair([1.0, 1.0], [1.0, 1.0])))


class TestIntegrateTest:
    def test_constant_on_probability(self):
        rng = np.random.default_rng(6)
        d = _random_density_2d(rng, 5, 6)
        g, _ = lookup_test_function("constant")
        assert integrate_test(g, d) == pytest.approx(1.0, abs=1e-12)

    def test_coordinate_on_flat(self):
        d = kernel_density_2d(np.ones((4, 4)), 16.0)
        g, _ = lookup_test_function("coordinate_x")
        assert integrate_test(g, d) == pytest.approx(0.5, abs=1e-12)
        g, _ = lookup_test_function("product_xy")
        assert integrate_test(g, d) == pytest.approx(0.25, abs=1e-12)

    def test_refinement_oracle(self):
        # brute Riemann sum at 10x resolution per axis as the accuracy oracle
        # (base grid fine enough that the midpoint rule itself is below 1e-6)
        rng = np.random.default_rng(7)
        d = _random_density_2d(rng, 16, 20)
        g, _ = lookup_test_function("cosine_bump")
        k = 10
        m, n = d.shape
        xs = (np.arange(m * k) + 0.5) / (m * k)
        ys = (np.arange(n * k) + 0.5) / (n * k)
        G = g(xs[:, None], ys[None, :])
        vals = np.repeat(np.repeat(d.values, k, axis=0), k, axis=1)
        brute = (G * vals).mean()
        assert integrate_test(g, d) == pytest.approx(brute, abs=1e-6)

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            lookup_test_function("not_a_function")
