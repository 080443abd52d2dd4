import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from irbridge.errors import DimensionMismatch
from irbridge.paths import PathCoefficients, make_path, reparam_sample
from irbridge.rng import substream
from irbridge.synthetic import (
    DegenerateConditioning,
    GaussianFieldPrior,
    GaussianMixturePrior,
    LinearDegradation,
    OracleDenoiser,
    condition_prior,
    degrade,
    eps_from_x0,
    log_density,
    make_task,
    posterior_mean_cond,
    posterior_mean_uncond,
    sample_prior,
    score,
    x0_from_eps,
)

GMM = GaussianMixturePrior(
    [0.3, 0.7],
    [[-1.0, 0.5], [1.5, -0.5]],
    [[[0.4, 0.1], [0.1, 0.3]], [[0.2, -0.05], [-0.05, 0.5]]],
)
C = PathCoefficients(0.8, 0.3, 0.6)
X_LQ = np.array([0.2, -0.1])


class TestPrior:
    def test_zero_covariance_sample_is_mean(self):
        p = GaussianMixturePrior([1.0], [[1.0, 2.0]], [np.zeros((2, 2))])
        assert np.array_equal(sample_prior(p, substream(0, "p")), [1.0, 2.0])

    def test_gmm_mean_monte_carlo(self):
        x = sample_prior(GMM, substream(1, "p"), 100_000)
        se = x.std(0) / math.sqrt(len(x))
        assert np.all(np.abs(x.mean(0) - GMM.mean()) < 4 * se)

    def test_flat_field(self):
        p = GaussianFieldPrior(4, 4, variance=0.0, jitter=0.0)
        assert np.all(sample_prior(p, substream(0, "f")) == 1.0)

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            GaussianMixturePrior([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            GaussianMixturePrior([1.0], [[0.0, 0.0]], [[[1.0]]])


class TestDegrade:
    def test_identity(self):
        x0 = np.arange(4.0)
        assert np.array_equal(degrade(x0, LinearDegradation.identity(4), substream(0, "d")), x0)

    def test_mask_rows(self):
        d = LinearDegradation.mask(6, keep=np.array([1, 0, 1, 0, 1, 0]), noise_std=0.0)
        y = degrade(np.full(6, 7.0), d, substream(0, "d"))
        assert np.array_equal(y, [7, 0, 7, 0, 7, 0])

    def test_dimming_mean(self):
        p = GaussianFieldPrior(8, 8)
        d = LinearDegradation.dimming(64)
        ys = np.array([degrade(sample_prior(p, substream(k, "x")), d, substream(k, "n")) for k in range(400)])
        assert ys.mean() == pytest.approx(0.3, abs=0.01)

    def test_blur_rows_average(self):
        d = LinearDegradation.blur(5, 5)
        np.testing.assert_allclose(d.A.sum(1), 1.0)
        assert d.A[0].max() == pytest.approx(0.25)


class TestPosteriorMean:
    def test_single_gaussian_textbook(self):
        m, S = np.array([0.5, -1.0]), np.array([[0.6, 0.2], [0.2, 0.4]])
        p = GaussianMixturePrior([1.0], [m], [S])
        x = np.array([0.3, 0.9])
        z = x - C.b_mul * X_LQ
        expected = m + S * C.f @ np.linalg.solve(C.f**2 * S + C.sigma**2 * np.eye(2), z - C.f * m)
        np.testing.assert_allclose(posterior_mean_uncond(p, x, C, X_LQ), expected, rtol=1e-12)

    def test_symmetric_mixture(self):
        S = np.array([[0.3, 0.0], [0.0, 0.3]])
        p = GaussianMixturePrior([0.5, 0.5], [[1.0, 1.0], [-1.0, -1.0]], [S, S])
        out = posterior_mean_uncond(p, C.b_mul * X_LQ, C, X_LQ)
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_quadrature_oracle(self):
        # brute-force E[x0 | x_t] on a dense 2-d grid
        g = np.linspace(-5, 5, 1201)
        X, Y = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], 1)
        dens = np.zeros(len(pts))
        for w, m, S in zip(GMM.weights, GMM.means, GMM.covariances):
            r = pts - m
            q = np.einsum("ni,ij,nj->n", r, np.linalg.inv(S), r)
            dens += w * np.exp(-0.5 * q) / (2 * np.pi * math.sqrt(np.linalg.det(S)))
        for x in (np.array([0.4, 0.1]), np.array([-1.0, 0.8])):
            z = x - C.b_mul * X_LQ
            lik = np.exp(-0.5 * ((z - C.f * pts) ** 2).sum(1) / C.sigma**2)
            wgt = dens * lik
            oracle = (pts * wgt[:, None]).sum(0) / wgt.sum()
            np.testing.assert_allclose(posterior_mean_uncond(GMM, x, C, X_LQ), oracle, atol=1e-4)

    def test_zero_sigma_warns(self):
        with pytest.warns(DegenerateConditioning):
            out = posterior_mean_uncond(GMM, np.array([0.8, 0.8]), PathCoefficients(0.8, 0.0, 0.0))
        np.testing.assert_allclose(out, [1.0, 1.0])

    def test_identity_observation_pins(self):
        x0 = np.array([0.7, -0.2])
        d = LinearDegradation.identity(2)
        for x in (np.zeros(2), np.array([3.0, -3.0])):
            np.testing.assert_allclose(posterior_mean_cond(GMM, d, x, C, x0), x0, atol=1e-12)

    def test_no_information_observation(self):
        d = LinearDegradation(np.zeros((2, 2)), np.zeros(2), 0.1)
        x = np.array([0.2, 0.3])
        np.testing.assert_allclose(
            posterior_mean_cond(GMM, d, x, C, X_LQ), posterior_mean_uncond(GMM, x, C, X_LQ), rtol=1e-12
        )

    def test_conditioned_prior_valid(self):
        d = LinearDegradation.dimming(2, noise_std=0.05)
        post = condition_prior(GMM, d, np.array([0.1, 0.2]))
        assert post.weights.sum() == pytest.approx(1.0, abs=1e-14)
        for S in post.covariances:
            assert np.linalg.eigvalsh(S).min() > 0

    def test_conditional_beats_unconditional_on_masking(self):
        p = GaussianFieldPrior(6, 6)
        gen = make_path("ddpm")
        err_c = err_u = 0.0
        for k in range(1000):
            g = substream(k, "mask-cmp")
            d = LinearDegradation.mask(36, 0.5, g)
            x0 = sample_prior(p, g)
            y = degrade(x0, d, g)
            c = gen.coeffs(float(g.uniform(0.05, 0.95)))
            x_t = reparam_sample(c, x0, y, g.standard_normal(36))
            err_c += np.mean((posterior_mean_cond(p, d, x_t, c, y) - x0) ** 2)
            err_u += np.mean((posterior_mean_uncond(p, x_t, c, y) - x0) ** 2)
        assert err_c < err_u


class TestScore:
    def test_single_gaussian(self):
        m, S = np.array([0.5, -1.0]), np.array([[0.6, 0.2], [0.2, 0.4]])
        p = GaussianMixturePrior([1.0], [m], [S])
        x = np.array([0.3, 0.9])
        K = C.f**2 * S + C.sigma**2 * np.eye(2)
        np.testing.assert_allclose(score(p, x, C, X_LQ), -np.linalg.solve(K, x - C.f * m - C.b_mul * X_LQ), rtol=1e-12)

    def test_symmetric_mode_is_stationary(self):
        S = np.eye(2) * 0.3
        p = GaussianMixturePrior([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.0]], [S, S])
        np.testing.assert_allclose(score(p, np.zeros(2), PathCoefficients(1.0, 0.0, 0.5)), 0.0, atol=1e-15)

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_finite_differences(self, a, b):
        x = np.array([a, b])
        h = 1e-4
        fd = np.array([(log_density(GMM, x + h * e, C, X_LQ) - log_density(GMM, x - h * e, C, X_LQ)) / (2 * h) for e in np.eye(2)])
        assert np.max(np.abs(score(GMM, x, C, X_LQ) - fd)) < 1e-5

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 0.95))
    def test_tweedie_consistency(self, a, b, tau):
        c = make_path("irsde").coeffs(tau)
        x = np.array([a, b])
        via_score = (x - c.b_mul * X_LQ + c.sigma**2 * score(GMM, x, c, X_LQ)) / c.f
        direct = posterior_mean_uncond(GMM, x, c, X_LQ)
        np.testing.assert_allclose(direct, via_score, rtol=1e-8, atol=1e-8 * np.abs(direct).max())

    def test_eps_round_trip(self):
        x_t, x0 = np.array([0.3, 0.1]), np.array([1.0, 2.0])
        np.testing.assert_allclose(x0_from_eps(x_t, eps_from_x0(x_t, x0, C, X_LQ), C, X_LQ), x0, rtol=1e-14)


class TestTasks:
    @pytest.mark.parametrize("name", ["mask", "dim", "blur", "gmm"])
    def test_deterministic(self, name):
        a, b = make_task(name, 4), make_task(name, 4)
        assert np.array_equal(a.x0, b.x0) and np.array_equal(a.x_lq, b.x_lq)

    def test_peak_recorded(self):
        t = make_task("dim", 0)
        assert t.peak == pytest.approx(1.0 + 3 * 0.5)
        assert t.config["peak"] == t.peak

    def test_config_override(self):
        t = make_task("dim", 0, {"dim": {"a": 0.5}})
        assert t.degradation.A[0, 0] == 0.5

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_task("jpeg", 0)

    def test_oracle_denoiser_is_exact_for_noise_free_mask(self):
        t = make_task("mask", 2)
        den = OracleDenoiser(t.prior, t.degradation, t.x_lq)
        keep = np.diag(t.degradation.A) > 0
        out = den(np.zeros_like(t.x0), make_path("ddpm").coeffs(0.5), t.x_lq)
        np.testing.assert_allclose(out[keep], t.x0[keep], atol=1e-6)
