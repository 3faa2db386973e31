import numpy as np
import pytest
from scipy import integrate, optimize
from scipy import stats as sps

from concordance import DataError, DegenerateConditionalError, GigParams
from concordance.samplers.gig import (
    gig_log_norm,
    gig_logpdf,
    gig_mode,
    sample_gig,
    update_variance_conditional,
)

# one parameter set per generator branch, plus the negative orders the variance
# conditional actually produces
BRANCH_PARAMS = [
    GigParams(p=3.5, chi=2.0, psi=2.0),     # mode-shifted ratio-of-uniforms
    GigParams(p=-4.5, chi=1.3, psi=1.25),   # same branch through reciprocation
    GigParams(p=0.8, chi=0.5, psi=0.5),     # plain ratio-of-uniforms
    GigParams(p=-0.6, chi=0.8, psi=0.05),   # plain branch, reciprocated
    GigParams(p=0.3, chi=0.05, psi=0.05),   # three-piece hat (small omega)
    GigParams(p=0.0, chi=0.1, psi=0.1),     # three-piece, log middle segment
]


class TestConditionalParams:
    def test_informative_prior_example(self):
        p = update_variance_conditional(np.array([0.1, -0.1]), 2, alpha=2.0, beta=1.0)
        assert p.p == pytest.approx(-3.0)
        assert p.chi == pytest.approx(2.02)
        assert p.psi == pytest.approx(0.5)

    def test_improper_prior_example(self):
        r = np.array([0.5, 0.5, 0.5, 0.5])  # sum of squares 1
        p = update_variance_conditional(r, 4)
        assert (p.p, p.chi, p.psi) == (-2.0, pytest.approx(1.0), 1.0)

    def test_improper_zero_residuals_degenerate(self):
        with pytest.raises(DegenerateConditionalError):
            update_variance_conditional(np.zeros(3), 3)

    def test_proper_prior_never_degenerate(self):
        p = update_variance_conditional(np.zeros(3), 3, alpha=2.0, beta=0.5)
        assert p.chi == pytest.approx(1.0)

    def test_param_validation(self):
        with pytest.raises(DataError):
            GigParams(p=1.0, chi=0.0, psi=1.0)
        with pytest.raises(DataError):
            GigParams(p=np.inf, chi=1.0, psi=1.0)


class TestDensity:
    @pytest.mark.parametrize("params", BRANCH_PARAMS, ids=lambda p: f"p={p.p}")
    def test_normalization_by_quadrature(self, params):
        mode = gig_mode(params)
        pdf = lambda v: np.exp(gig_logpdf(v, params))
        lo, _ = integrate.quad(pdf, 0, mode, limit=200)
        hi, _ = integrate.quad(pdf, mode, np.inf, limit=200)
        assert lo + hi == pytest.approx(1.0, rel=1e-8)

    def test_mode_is_argmax(self):
        for params in BRANCH_PARAMS:
            m = gig_mode(params)
            res = optimize.minimize_scalar(
                lambda v: -gig_logpdf(v, params),
                bounds=(m / 50, m * 50), method="bounded",
                options={"xatol": 1e-12})
            assert m == pytest.approx(res.x, rel=1e-6)

    def test_matches_scipy_density(self):
        for params in BRANCH_PARAMS:
            omega = np.sqrt(params.chi * params.psi)
            scale = np.sqrt(params.chi / params.psi)
            grid = gig_mode(params) * np.array([0.3, 1.0, 3.0])
            want = sps.geninvgauss.logpdf(grid, params.p, omega, scale=scale)
            assert np.allclose(gig_logpdf(grid, params), want, rtol=1e-10)


class TestSampler:
    @pytest.mark.parametrize("k,params", list(enumerate(BRANCH_PARAMS)),
                             ids=lambda x: str(x))
    def test_against_scipy_reference(self, k, params):
        if isinstance(params, int):
            return
        rng = np.random.default_rng(1000 + k)
        draws = sample_gig(params, rng, size=20000)
        omega = np.sqrt(params.chi * params.psi)
        scale = np.sqrt(params.chi / params.psi)
        res = sps.kstest(draws, sps.geninvgauss(params.p, omega, scale=scale).cdf)
        assert res.pvalue > 1e-3

    def test_mean_by_quadrature(self):
        params = GigParams(p=-3.0, chi=2.02, psi=0.5)
        mode = gig_mode(params)
        f = lambda v: v * np.exp(gig_logpdf(v, params))
        want = (integrate.quad(f, 0, mode, limit=200)[0]
                + integrate.quad(f, mode, np.inf, limit=200)[0])
        rng = np.random.default_rng(7)
        draws = sample_gig(params, rng, size=200000)
        se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - want) < 4 * se

    def test_seed_determinism(self):
        params = GigParams(p=-2.5, chi=0.7, psi=0.75)
        a = sample_gig(params, np.random.default_rng(5), size=50)
        b = sample_gig(params, np.random.default_rng(5), size=50)
        assert np.array_equal(a, b)

    def test_scalar_and_vector_forms(self):
        params = GigParams(p=1.5, chi=1.0, psi=1.0)
        x = sample_gig(params, np.random.default_rng(0))
        assert np.isscalar(x) and x > 0
        xs = sample_gig(params, np.random.default_rng(0), size=7)
        assert xs.shape == (7,) and np.all(xs > 0)

    def test_inverse_gamma_limit(self):
        # psi -> 0 degenerates to inverse-gamma(-p, chi/2); small psi should be close
        alpha, beta = 2.0, 0.6
        params = GigParams(p=-alpha, chi=2 * beta, psi=1e-9)
        rng = np.random.default_rng(12)
        draws = sample_gig(params, rng, size=20000)
        res = sps.kstest(draws, sps.invgamma(alpha, scale=beta).cdf)
        assert res.statistic < 0.02
