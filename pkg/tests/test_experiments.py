import numpy as np
import pytest

from sinkbridge.ensembles import EntryKind, ExperimentConfig, variance_of
from sinkbridge.errors import RankDeficiencyUnexpected
from sinkbridge.experiments import (
    LimitSequenceSpec,
    clt_covariance,
    concentration_trial,
    run_clt_experiment,
    run_concentration_experiment,
    run_deterministic_limit_experiment,
    run_esd_experiment,
    run_test_function_experiment,
)
from sinkbridge.scaling import MarginPair, ScalingProblem, sinkhorn_scale
from sinkbridge.spectral import flatness_smax
from sinkbridge.stability import concentration_constants


def _cfg(**over):
    d = {
        "schema_version": 1, "m": 30, "n": 30,
        "margin_spec": {"kind": "uniform", "fraction": 0.3},
        "mean_spec": {"kind": "homogeneous", "value": 2.0},
        "dist": "poisson", "seed": 0, "trials": 20,
    }
    d.update(over)
    return ExperimentConfig.from_dict(d)


class TestCltCovariance:
    def _model(self, seed=0, m=3, n=4):
        rng = np.random.default_rng(seed)
        lam = rng.uniform(1.0, 5.0, (m, n))
        margins = MarginPair(np.full(m, 3.0 * n), np.full(n, 3.0 * m))
        return clt_covariance(ScalingProblem(lam, margins), lam.copy()), lam, margins

    def test_kernel_direction(self):
        model, lam, margins = self._model()
        m, n = lam.shape
        v = np.concatenate([np.ones(m), -np.ones(n)])
        assert np.abs(model.L @ v).max() <= 1e-9

    def test_pseudoinverse_identity(self):
        model, *_ = self._model()
        err = np.abs(model.L_dagger @ model.L @ model.L_dagger - model.L_dagger).max()
        assert err <= 1e-9

    def test_theory_cov_symmetric_psd(self):
        model, *_ = self._model()
        C = model.theory_cov
        assert np.abs(C - C.T).max() <= 1e-9
        assert np.linalg.eigvalsh(C).min() >= -1e-9

    def test_zero_variance_gives_zero_cov(self):
        rng = np.random.default_rng(1)
        lam = rng.uniform(1.0, 5.0, (3, 4))
        margins = MarginPair(np.full(3, 12.0), np.full(4, 9.0))
        model = clt_covariance(ScalingProblem(lam, margins), np.zeros((3, 4)))
        assert np.abs(model.theory_cov).max() == 0.0

    def test_H_operator_matches_columns(self):
        model, lam, margins = self._model()
        m, n = lam.shape
        pot = model.potentials
        delta = np.zeros((m, n))
        delta[1, 2] = 1.0
        h = model.H_applied(delta)
        expect = np.zeros(m + n)
        w = np.exp(pot.alpha[1] + pot.beta[2])
        expect[1] = w
        expect[m + 2] = w
        np.testing.assert_allclose(h, expect, atol=1e-12)

    def test_monte_carlo_oracle_2x2(self):
        # independent check of the delta-method covariance: empirical means of
        # M Poisson matrices drawn exactly via Poisson(M * lam)/M
        rng = np.random.default_rng(2)
        lam = np.full((2, 2), 3.0)
        margins = MarginPair(np.full(2, 4.0), np.full(2, 4.0))
        problem = ScalingProblem(lam, margins)
        model = clt_covariance(problem, variance_of(EntryKind.POISSON, lam))
        M, reps = 100_000, 20_000
        devs = np.empty((reps, 4))
        pot0 = model.potentials
        for t in range(reps):
            xbar = rng.poisson(lam * M) / M
            res = sinkhorn_scale(ScalingProblem(xbar, margins), tol=1e-12)
            devs[t] = np.sqrt(M) * np.concatenate([
                res.potentials.alpha - pot0.alpha, res.potentials.beta - pot0.beta])
        emp = np.cov(devs.T, ddof=1)
        rel = np.linalg.norm(emp - model.theory_cov) / np.linalg.norm(model.theory_cov)
        assert rel <= 0.05

    def test_rank_deficiency_detected(self):
        # a disconnected block problem has extra kernel directions
        lam = np.array([[1.0, 0.0], [0.0, 1.0]])
        margins = MarginPair([1.0, 1.0], [1.0, 1.0])
        with pytest.raises((RankDeficiencyUnexpected, ValueError)):
            clt_covariance(ScalingProblem(lam, margins), np.ones((2, 2)))


class TestRunClt:
    def test_report_structure_and_gauge(self):
        cfg = _cfg(m=3, n=4, mean_spec={"kind": "uniform_random", "lo": 1.0, "hi": 5.0},
                   margin_spec={"kind": "uniform", "fraction": 3.0})
        rep = run_clt_experiment(cfg, M=500, replicates=80)
        assert rep["failures"] == 0
        assert rep["max_gauge_residual"] <= 1e-9
        assert rep["rel_frobenius_error"] < 1.0
        emp = np.array(rep["empirical_cov"])
        assert emp.shape == (7, 7)

    def test_deterministic(self):
        cfg = _cfg(m=2, n=3, mean_spec={"kind": "uniform_random", "lo": 1.0, "hi": 4.0},
                   margin_spec={"kind": "uniform", "fraction": 2.0})
        rep1 = run_clt_experiment(cfg, M=200, replicates=50)
        rep2 = run_clt_experiment(cfg, M=200, replicates=50)
        assert rep1 == rep2

    def test_m_sweep_shares_noise(self):
        cfg = _cfg(m=2, n=2, mean_spec={"kind": "uniform_random", "lo": 2.0, "hi": 4.0},
                   margin_spec={"kind": "uniform", "fraction": 3.0})
        rep = run_clt_experiment(cfg, M=100, replicates=30, m_sweep=(100, 1000),
                                 sweep_replicates=60)
        errs = rep["m_sweep"]["rel_frobenius_errors"]
        assert len(errs) == 2 and all(np.isfinite(errs))


class TestConcentration:
    def test_degenerate_injection(self):
        cfg = _cfg()
        lam = np.full((30, 30), 2.0)
        margins = MarginPair(np.full(30, 9.0), np.full(30, 9.0))
        problem = ScalingProblem(lam, margins)
        pot = sinkhorn_scale(problem, tol=1e-12).potentials
        var = variance_of(EntryKind.POISSON, lam)
        consts = concentration_constants(problem, np.sqrt(2.0), 1.0, 1.0,
                                         s_max=flatness_smax(pot, var))
        row = concentration_trial(lam.copy(), problem, pot, consts)
        assert row["scalable"]
        assert row["gauge_distance"] <= 1e-9
        assert row["spectral_deviation"] <= 1e-12
        assert row["l1_deviation"] <= 1e-9
        assert row["E1"] and row["E2"] and row["E3"]

    def test_run_report(self):
        rep = run_concentration_experiment(_cfg(trials=15), D=1.0)
        assert rep["scalability_failures"] == 0
        assert len(rep["rows"]) == 15
        assert rep["joint_E2_violations"] == 0
        assert rep["joint_E3_violations"] == 0
        assert 0.0 <= rep["freq_E1"] <= 1.0
        # raw probability bounds are reported even when vacuous at desk scale
        assert np.isfinite(rep["prob_lower_bound_E1"])

    def test_deterministic(self):
        r1 = run_concentration_experiment(_cfg(trials=5, seed=3), D=1.0)
        r2 = run_concentration_experiment(_cfg(trials=5, seed=3), D=1.0)
        assert r1 == r2


class TestTestFunctionExperiment:
    def test_constant_g_is_exact_zero(self):
        rep = run_test_function_experiment(_cfg(trials=10), "constant")
        assert rep["max_lhs"] <= 1e-9

    def test_coordinate_g_pinned_by_margins(self):
        # integrals of functions of one coordinate only see the (exact) margins
        rep = run_test_function_experiment(_cfg(trials=10), "coordinate_x")
        assert rep["max_lhs"] <= 1e-9

    def test_bound_holds(self):
        rep = run_test_function_experiment(_cfg(trials=20), "product_xy")
        assert rep["freq_bound_holds"] >= 0.9

    def test_decay_in_n(self):
        medians = []
        for n in (20, 40, 80):
            rep = run_test_function_experiment(_cfg(m=n, n=n, trials=25), "product_xy")
            medians.append(rep["median_lhs"])
        assert medians[0] > medians[1] > medians[2]


class TestEsdExperiment:
    def test_smoke_structure(self):
        rep = run_esd_experiment(_cfg(m=80, n=80, trials=1,
                                      mean_spec={"kind": "homogeneous", "value": 0.4}))
        assert rep["scalable"] and rep["dyson_converged"]
        assert abs(rep["dyson_mass"] - 1.0) <= 2e-2
        assert rep["eigenvalues"].size == 80
        width = rep["hist_edges"][1] - rep["hist_edges"][0]
        assert rep["hist_density"].sum() * width == pytest.approx(1.0, abs=1e-9)
        # homogeneous profile is exactly flat: prediction coincides with MP
        assert rep["sup_density_vs_mp"] <= 1e-3

    def test_deterministic(self):
        r1 = run_esd_experiment(_cfg(m=50, n=50, trials=1, seed=5))
        r2 = run_esd_experiment(_cfg(m=50, n=50, trials=1, seed=5))
        assert r1["ks_vs_mp"] == r2["ks_vs_mp"]
        np.testing.assert_array_equal(r1["eigenvalues"], r2["eigenvalues"])


class TestDeterministicLimit:
    def test_constant_sequence_is_exactly_zero(self):
        spec = LimitSequenceSpec(levels=(3, 4), ref_level=6, ramp_slope=0.0,
                                 cost_strength=0.0)
        rep = run_deterministic_limit_experiment(spec)
        for row in rep["rows"]:
            assert row["lhs"] <= 1e-24
            assert row["rhs"] <= 1e-12

    def test_ramp_sequence_decays_and_holds(self):
        spec = LimitSequenceSpec(levels=(3, 4, 5), ref_level=7)
        rep = run_deterministic_limit_experiment(spec)
        assert rep["all_hold"]
        assert rep["lhs_decreasing"]

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            LimitSequenceSpec(levels=(5, 6), ref_level=6)
        with pytest.raises(ValueError):
            LimitSequenceSpec(ramp_slope=2.5)
