import json
import math

import numpy as np
import pytest
from scipy import stats

from selmeta.densities import ModelSpec, Study
from selmeta.loo import (
    LooResult,
    exact_loo,
    fit_gpd_pwm,
    gpd_quantile,
    importance_loo,
    lpd,
    pointwise_loglik,
    psis_smooth,
)
from selmeta.mcmc import SamplerConfig, run_sampler
from selmeta.stats_core import DomainError

X = np.array([0.45, 0.10, 0.62, 0.20, 0.30, 0.25])
SE = np.array([0.20, 0.15, 0.30, 0.10, 0.25, 0.12])


def conjugate(x, se, prior_sd=1.0):
    prec = 1 / prior_sd**2 + np.sum(1 / se**2)
    return np.sum(x / se**2) / prec, 1 / prec


def analytic_loo(x, se):
    """Leave-one-out predictive densities of the conjugate fixed-effect normal model."""
    out = []
    for i in range(x.size):
        keep = np.arange(x.size) != i
        m, v = conjugate(x[keep], se[keep])
        out.append(stats.norm.logpdf(x[i], m, math.sqrt(v + se[i] ** 2)))
    return np.array(out)


def posterior_pointwise(S, seed=0):
    m, v = conjugate(X, SE)
    theta = np.random.default_rng(seed).normal(m, math.sqrt(v), S)
    return stats.norm.logpdf(X[None, :], theta[:, None], SE[None, :])


class TestGPD:
    @pytest.mark.parametrize("shape", [-0.2, 0.0, 0.3, 0.6])
    def test_pwm_recovers_shape(self, shape):
        y = stats.genpareto.rvs(shape, scale=2.0, size=200000, random_state=np.random.default_rng(1))
        k, sigma = fit_gpd_pwm(y)
        assert k == pytest.approx(shape, abs=0.03)
        assert sigma == pytest.approx(2.0, rel=0.03)

    @pytest.mark.parametrize("shape", [-0.3, 0.0, 0.4])
    def test_quantile_matches_scipy(self, shape):
        p = np.linspace(0.01, 0.99, 7)
        np.testing.assert_allclose(gpd_quantile(p, shape, 1.5), stats.genpareto.ppf(p, shape, scale=1.5),
                                   rtol=1e-12)


class TestSmoothing:
    def test_light_tail(self):
        lr = np.random.default_rng(2).normal(0, 0.3, 4000)
        lw, k, flags = psis_smooth(lr)
        assert k < 0.5 and flags == []
        assert np.max(lw) <= 0.0

    def test_heavy_tail_flagged(self):
        # ratios Pareto with tail index 1 have shape 1
        lr = np.log(stats.pareto.rvs(1.0, size=4000, random_state=np.random.default_rng(3)))
        _, k, flags = psis_smooth(lr)
        assert k > 0.7 and "high_pareto_k" in flags

    def test_truncated_at_max_raw_weight(self):
        lr = np.log(stats.pareto.rvs(0.8, size=2000, random_state=np.random.default_rng(4)))
        lw, _, _ = psis_smooth(lr)
        assert np.max(lw) <= np.max(lr - np.max(lr)) + 1e-15

    def test_body_untouched(self):
        lr = np.random.default_rng(5).normal(size=1000)
        lw, _, _ = psis_smooth(lr)
        body = np.argsort(lr)[:800]
        np.testing.assert_array_equal(lw[body], (lr - lr.max())[body])

    def test_degenerate(self):
        _, k, flags = psis_smooth(np.zeros(500))
        assert math.isnan(k) and flags == ["degenerate"]

    def test_few_tail_draws(self):
        _, k, flags = psis_smooth(np.random.default_rng(6).normal(size=20))
        assert math.isnan(k) and flags == ["few_tail_draws"]


class TestImportanceLoo:
    def test_matches_analytic(self):
        res = importance_loo(posterior_pointwise(8000), model="fe")
        np.testing.assert_allclose(res.pointwise_elpd, analytic_loo(X, SE), atol=0.01)
        assert np.all(res.pareto_k < 0.5)

    def test_influential_point_has_large_k(self):
        x = X.copy()
        x[3] = -0.05
        m, v = conjugate(x, SE)
        theta = np.random.default_rng(0).normal(m, math.sqrt(v), 8000)
        res = importance_loo(stats.norm.logpdf(x[None, :], theta[:, None], SE[None, :]))
        assert np.argmax(res.pareto_k) == 3 and res.pareto_k[3] > 0.5

    def test_raw_is_close_too(self):
        res = importance_loo(posterior_pointwise(8000), smooth=False)
        assert res.method == "is"
        np.testing.assert_allclose(res.pointwise_elpd, analytic_loo(X, SE), atol=0.02)

    def test_below_lpd(self):
        ll = posterior_pointwise(4000)
        assert importance_loo(ll).elpd_loo < lpd(ll)

    def test_lpd_value(self):
        ll = np.log(np.array([[0.2, 0.5], [0.4, 0.5]]))
        assert lpd(ll) == pytest.approx(math.log(0.3) + math.log(0.5))

    def test_too_few_draws(self):
        with pytest.raises(DomainError):
            importance_loo(np.zeros((50, 3)))

    def test_looic_and_se(self):
        r = LooResult(-3.0, np.array([-1.0, -0.5, -1.5]), np.zeros(3))
        assert r.looic == 6.0
        assert r.se_looic == pytest.approx(2 * math.sqrt(3 * 0.25))
        d = json.loads(r.to_json())
        assert set(d) == {"model", "method", "elpd_loo", "looic", "se", "pointwise_elpd", "pareto_k", "flags"}


class TestFittedLoo:
    STUDIES = [Study(x, s) for x, s in zip(X, SE)]
    CFG = SamplerConfig(chains=4, warmup=400, draws=1000, seed=9)

    def test_pointwise_from_fit(self):
        fit = run_sampler(self.STUDIES, ModelSpec("uncorrected", "fixed"), config=self.CFG)
        ll = pointwise_loglik(fit)
        assert ll.shape == (4000, X.size)
        th = fit.column("theta0")
        np.testing.assert_allclose(ll[:, 0], stats.norm.logpdf(X[0], th, SE[0]))
        res = importance_loo(ll)
        np.testing.assert_allclose(res.pointwise_elpd, analytic_loo(X, SE), atol=0.03)

    def test_pointwise_on_new_data(self):
        fit = run_sampler(self.STUDIES, ModelSpec("pubbias"), config=self.CFG)
        new = [Study(0.2, 0.1)]
        assert pointwise_loglik(fit, new).shape == (4000, 1)

    def test_exact_loo_matches_analytic(self):
        res = exact_loo(self.STUDIES, ModelSpec("uncorrected", "fixed"), config=self.CFG, model="fe")
        assert res.method == "exact"
        np.testing.assert_allclose(res.pointwise_elpd, analytic_loo(X, SE), atol=0.03)
