import numpy as np
import pytest
from scipy import optimize

from concordance import (
    CalibrationPrior,
    ConfigurationError,
    DataError,
    ParameterState,
    fit_mode,
    log_posterior,
    log_transform,
    ratio_estimates,
    shrinkage_factor,
    update_means,
    update_variance,
)
from concordance.estimators import mean_system, mode_objective

from helpers import complete_grid_data, make_instance, tiny_table


class TestShrinkageFactor:
    def test_pinned_values(self):
        assert shrinkage_factor(0.0) == pytest.approx(1.0, abs=1e-15)
        assert shrinkage_factor(3.0) == pytest.approx(2.0 / 3.0, abs=1e-15)
        assert shrinkage_factor(8.0) == pytest.approx(0.5, abs=1e-15)

    def test_strictly_decreasing(self):
        s = np.linspace(0.0, 50.0, 2001)
        r = shrinkage_factor(s)
        assert np.all(np.diff(r) < 0)

    def test_product_identity(self):
        s = np.linspace(0.0, 30.0, 500)
        lhs = shrinkage_factor(s) * s
        rhs = 2.0 * (np.sqrt(1.0 + s) - 1.0)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            shrinkage_factor(-0.1)


class TestUpdateVariance:
    R = np.array([0.25, -0.1, 0.3])

    def test_flat_prior_closed_form(self):
        S2 = float(np.mean(self.R ** 2))
        assert update_variance(self.R) == pytest.approx(
            2.0 * (np.sqrt(1.0 + S2) - 1.0), rel=1e-14)

    def test_frozen_values(self):
        assert update_variance(self.R) == pytest.approx(0.053452377501525206, rel=1e-12)
        assert update_variance(self.R, alpha=2.0, beta=0.1) == pytest.approx(
            0.04014348615439212, rel=1e-8)

    def test_ig_prior_matches_numeric_maximizer(self):
        # oracle: maximize the conditional density assembled from first principles
        rng = np.random.default_rng(3)
        for _ in range(25):
            r = rng.normal(0.0, rng.uniform(0.05, 1.0), rng.integers(2, 12))
            n = r.size
            alpha = rng.uniform(0.5, 4.0)
            beta = rng.uniform(0.02, 1.0)

            def g(v):
                return (-(n / 2) * np.log(v) - np.sum((r + v / 2) ** 2) / (2 * v)
                        - (alpha + 1) * np.log(v) - beta / v)

            res = optimize.minimize_scalar(lambda v: -g(v), bounds=(1e-9, 50.0),
                                           method="bounded", options={"xatol": 1e-13})
            assert update_variance(r, alpha=alpha, beta=beta) == pytest.approx(
                res.x, rel=1e-6)

    def test_ig_prior_stationarity(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            r = rng.normal(0.0, 0.5, 6)
            v = update_variance(r, alpha=1.5, beta=0.2)
            n, S2 = r.size, float(np.mean(r ** 2))
            resid = -(n / 2 + 1.5 + 1) / v + (n * S2 + 0.4) / (2 * v * v) - n / 8
            assert abs(resid) < 1e-9

    def test_explicit_n_overrides_size(self):
        # residuals from 2 of n=4 entries: S2 uses the caller-supplied n
        r = np.array([0.3, -0.3])
        v4 = update_variance(r, 4)
        S2 = float(np.sum(r ** 2)) / 4
        assert v4 == pytest.approx(2.0 * (np.sqrt(1.0 + S2) - 1.0), rel=1e-14)

    def test_zero_residuals_hit_floor(self):
        assert update_variance(np.zeros(3)) == pytest.approx(1e-12)
        assert update_variance(np.zeros(3), v_min=1e-6) == pytest.approx(1e-6)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            update_variance(np.array([]))


class TestUpdateMeans:
    def test_single_cell_profile(self):
        # one entry, flat G: G absorbs the fit so B lands exactly on its prior
        data = complete_grid_data(1, 1, [1.3])
        prior = CalibrationPrior.from_area_estimates(a=[np.exp(0.4)], tau=[0.3])
        v = np.array([0.2])
        B, G = update_means(data, v, prior)
        assert B[0] == pytest.approx(0.4, abs=1e-12)
        assert G[0] == pytest.approx(1.3 + 0.1 - 0.4, abs=1e-12)

    def test_matches_direct_least_squares(self):
        data, prior, _ = make_instance(3, 4, seed=11)
        v = np.array([0.05, 0.1, 0.07])
        B, G = update_means(data, v, prior)

        # independent construction: stacked weighted design with prior pseudo-rows
        N, M = 3, 4
        n_e = data.n_entries
        X = np.zeros((n_e + N, N + M))
        w = np.zeros(n_e + N)
        t = np.zeros(n_e + N)
        for e in range(n_e):
            X[e, data.instrument_idx[e]] = 1.0
            X[e, N + data.source_idx[e]] = 1.0
            w[e] = 1.0 / v[data.instrument_idx[e]]
            t[e] = data.y[e] + 0.5 * v[data.instrument_idx[e]]
        for i in range(N):
            X[n_e + i, i] = 1.0
            w[n_e + i] = 1.0 / prior.tau[i] ** 2
            t[n_e + i] = prior.b[i]
        sw = np.sqrt(w)
        sol, *_ = np.linalg.lstsq(X * sw[:, None], t * sw, rcond=None)
        assert np.allclose(B, sol[:N], atol=1e-9)
        assert np.allclose(G, sol[N:], atol=1e-9)

    def test_quadratic_form_identity(self):
        data, prior, _ = make_instance(2, 3, seed=5)
        v = np.array([0.04, 0.09])
        P, rhs, const = mean_system(data, v, prior)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(0, 1, P.shape[0])
            quad = const - 2.0 * rhs @ x + x @ P @ x
            B, G = x[:2], x[2:]
            w = 1.0 / v[data.instrument_idx]
            ytil = data.y + 0.5 * v[data.instrument_idx]
            direct = np.sum(w * (ytil - B[data.instrument_idx] - G[data.source_idx]) ** 2)
            direct += np.sum((B - prior.b) ** 2 / prior.tau ** 2)
            assert quad == pytest.approx(direct, rel=1e-10)

    def test_tau_pull(self):
        # shrinking tau drags B toward the calibration location b
        data, _, _ = make_instance(2, 3, seed=9)
        v = np.array([0.05, 0.05])
        b = np.array([0.3, -0.2])
        wide = CalibrationPrior(b=b, tau=np.array([5.0, 5.0]),
                                alpha=np.full(2, 2.0), beta=np.full(2, 0.1))
        tight = CalibrationPrior(b=b, tau=np.array([1e-4, 1e-4]),
                                 alpha=np.full(2, 2.0), beta=np.full(2, 0.1))
        B_tight, _ = update_means(data, v, tight)
        B_wide, _ = update_means(data, v, wide)
        assert np.all(np.abs(B_tight - b) < np.abs(B_wide - b))
        assert np.allclose(B_tight, b, atol=1e-4)


class TestFitMode:
    def test_converges_and_is_monotone(self):
        data, prior, _ = make_instance(3, 5, seed=2)
        res = fit_mode(data, prior)
        assert res.converged
        assert np.all(np.diff(res.objective_trace) >= -1e-9)
        assert not res.boundary_flags.any()

    def test_matches_direct_optimizer(self):
        data, prior, _ = make_instance(2, 3, seed=21, tau=0.1)
        res = fit_mode(data, prior, tolerance=1e-12)

        def neg(x):
            st = ParameterState(B=x[:2], G=x[2:5], v=np.exp(x[5:]))
            return -log_posterior(st, data, prior)

        x0 = np.concatenate([res.state.B, res.state.G, np.log(res.state.v)])
        direct = optimize.minimize(neg, x0 + 0.05, method="Nelder-Mead",
                                   options={"xatol": 1e-10, "fatol": 1e-12,
                                            "maxiter": 20000, "maxfev": 20000})
        got = np.concatenate([res.state.B, res.state.G, np.log(res.state.v)])
        assert np.max(np.abs(got - direct.x)) < 1e-6

    def test_improper_prior_boundary(self):
        # single entry per instrument: residuals vanish, v pinned at the floor
        data = complete_grid_data(1, 1, [0.7])
        prior = CalibrationPrior.from_area_estimates(
            a=[1.0], tau=[0.5], variance_prior_improper=True)
        res = fit_mode(data, prior)
        assert res.boundary_flags[0]
        assert res.state.v[0] == pytest.approx(1e-12)

    def test_mode_objective_excludes_improper_term(self):
        data = complete_grid_data(2, 2, [0.1, 0.4, 0.2, 0.6])
        prior = CalibrationPrior.from_area_estimates(
            a=[1.0, 1.0], tau=[0.5, 0.5], variance_prior_improper=True)
        st = ParameterState(B=np.zeros(2), G=np.zeros(2), v=np.array([0.1, 0.2]))
        gap = log_posterior(st, data, prior) - mode_objective(st, data, prior)
        assert gap == pytest.approx(-np.log(0.1) - np.log(0.2), rel=1e-12)


class TestRatioEstimates:
    def test_geometric_oracle(self):
        t = tiny_table()  # counts 120,40,300; T 2,1,5; pairs (0,0),(0,1),(1,0)
        est = ratio_estimates(t, a=[2.0, 3.0])
        # raw: 120/(2*2)=30, 40/(1*2)=20, 300/(5*3)=20
        assert np.allclose(est.raw, [30.0, 20.0, 20.0])
        assert est.combined[0] == pytest.approx(np.sqrt(30.0 * 20.0), rel=1e-12)
        assert est.combined[1] == pytest.approx(20.0, rel=1e-12)

    def test_arithmetic_combine(self):
        t = tiny_table()
        est = ratio_estimates(t, a=[2.0, 3.0], combine="arithmetic")
        assert est.combined[0] == pytest.approx(25.0, rel=1e-12)

    def test_bad_inputs(self):
        t = tiny_table()
        with pytest.raises(DataError):
            ratio_estimates(t, a=[2.0])
        with pytest.raises(DataError):
            ratio_estimates(t, a=[2.0, -1.0])
        with pytest.raises(ConfigurationError):
            ratio_estimates(t, a=[2.0, 3.0], combine="median")

    def test_poisson_dispersion_exceeds_mode_fit(self):
        # Counts around 5 per cell: the equal-weight geometric combine takes the
        # raw log-scale noise in full, while the mode fit shrinks the fluxes
        # toward a weakly informative prior.  Spread over replications must be
        # visibly larger for the ratio estimator.
        from concordance.synth import TruthSpec, gen_poisson

        a_true = np.array([1.0, 1.1, 0.9, 1.05])
        f_true = np.array([5.2, 4.6, 5.8, 4.2, 5.5, 4.9, 4.4, 5.6])
        N, M = a_true.size, f_true.size
        truth = TruthSpec.uniform_adjustments(a_true, f_true, np.full(N, 0.05), 1.0)
        prior = CalibrationPrior(b=np.log(a_true), tau=np.full(N, 0.1),
                                 alpha=np.full(N, 6.0), beta=np.full(N, 1.25),
                                 flux_mean=np.full(M, np.log(5.0)),
                                 flux_tau=np.full(M, 0.4))
        rng = np.random.default_rng(177)
        reps = 1000
        est_r = np.empty((reps, M))
        est_m = np.empty((reps, M))
        for rep in range(reps):
            table = gen_poisson(truth, rng)
            est_r[rep] = ratio_estimates(table, a_true).combined
            est_m[rep] = np.exp(fit_mode(log_transform(table), prior).state.G)
        assert est_r.var(axis=0).sum() > est_m.var(axis=0).sum()
