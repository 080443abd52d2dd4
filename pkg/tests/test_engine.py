import json
import math

import numpy as np
import pytest

from irbridge.engine import (
    ENGINE_DEFAULTS,
    bridge_native_reverse_step,
    bridge_native_run,
    default_schedule,
    generative_run,
    irbridge_run,
    make_bridge,
    make_denoiser,
    mse,
    psnr,
)
from irbridge.errors import SourceDegenerate
from irbridge.paths import BridgeParams, make_path
from irbridge.rng import substream
from irbridge.synthetic import (
    GaussianMixturePrior,
    LinearDegradation,
    TaskInstance,
    condition_prior,
    degrade,
    make_task,
)

GEN = make_path(ENGINE_DEFAULTS["gen"])


def gaussian_task(noise_std=0.5, seed=0):
    prior = GaussianMixturePrior([1.0], [[1.0, -0.5]], [[[1.0, 0.3], [0.3, 0.8]]])
    deg = LinearDegradation.dimming(2, a=0.5, c=0.0, noise_std=noise_std)
    x0 = np.array([1.2, -0.3])
    return TaskInstance(prior, deg, x0, degrade(x0, deg, substream(seed, "y")), seed, "gauss", {})


class _Fixed:
    """Stand-in generator returning a fixed draw."""

    def __init__(self, z):
        self.z = z

    def standard_normal(self, shape):
        return np.broadcast_to(self.z, shape).copy()


class TestMetrics:
    def test_identical(self):
        a = np.ones(5)
        assert mse(a, a) == 0.0 and psnr(a, a) == math.inf

    def test_offset(self):
        a = np.zeros((4, 4))
        assert mse(a, a + 0.1) == pytest.approx(0.01)
        assert psnr(a, a + 0.1, peak=1.0) == pytest.approx(20.0)

    def test_against_loop(self, rng):
        a, b = rng.standard_normal(37), rng.standard_normal(37)
        tot = 0.0
        for u, v in zip(a, b):
            tot += (u - v) * (u - v)
        assert mse(a, b) == pytest.approx(tot / 37, rel=1e-12, abs=1e-12)

    def test_shape_and_peak_errors(self):
        with pytest.raises(ValueError):
            mse(np.zeros(2), np.zeros(3))
        with pytest.raises(ValueError):
            psnr(np.zeros(2), np.ones(2), peak=0.0)


class TestIRBridge:
    @pytest.mark.parametrize("bridge", ["irsde", "goub"])
    @pytest.mark.parametrize("task", ["mask", "dim", "blur"])
    def test_perfect_denoiser(self, bridge, task):
        t = make_task(task, 1)
        b = make_bridge(bridge)
        tr = irbridge_run(t, default_schedule(b, GEN), make_denoiser("perfect", t), b, GEN, substream(1, "r"))
        assert tr.final_mse <= 1e-10

    def test_goub_without_skip_raises(self):
        t = make_task("dim", 0)
        b = make_bridge("goub")
        with pytest.raises(SourceDegenerate):
            irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(0, "r"), skip_degenerate=False)

    def test_goub_skip_finite(self):
        t = make_task("dim", 0)
        b = make_bridge("goub")
        tr = irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(0, "r"))
        assert tr.records[0].skipped and not any(r.skipped for r in tr.records[1:])
        assert np.all(np.isfinite(tr.final_estimate))

    def test_restores_mask(self):
        t = make_task("mask", 3)
        b = make_bridge("irsde")
        tr = irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(3, "r"))
        assert tr.final_mse < 0.5 * mse(t.x_lq, t.x0)

    def test_deterministic(self):
        t = make_task("blur", 5)
        b = make_bridge("irsde")
        runs = [irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(5, "r")) for _ in range(2)]
        assert runs[0].to_json() == runs[1].to_json()

    def test_mean_init(self):
        t = make_task("gmm", 0)
        b = make_bridge("irsde")
        tr = irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(0, "r"), init="mean")
        assert tr.config["init"] == "mean" and np.isfinite(tr.final_mse)

    def test_serialization(self):
        t = make_task("gmm", 0)
        b = make_bridge("irsde")
        tr = irbridge_run(t, default_schedule(b, GEN, n_steps=10), make_denoiser("perfect", t), b, GEN, substream(0, "r"))
        doc = json.loads(tr.to_json())
        assert set(doc) == {"config", "seed", "steps", "final", "metrics"}
        assert doc["metrics"]["final_psnr"] is None  # infinite PSNR for an exact result
        assert len(tr.to_csv().splitlines()) == 11

    def test_state_mse_trends_down(self):
        # end of the trajectory is closer to x0 than its first half
        for name in ("mask", "dim", "blur", "gmm"):
            for seed in range(3):
                t = make_task(name, seed)
                b = make_bridge("irsde")
                tr = irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(seed, "r"))
                s = np.array([r.state_mse for r in tr.records])
                w = np.convolve(s, np.ones(10) / 10, "valid")
                assert w[-1] < w[len(s) // 2]
                assert s[-1] <= s[: len(s) // 2].min()

    @pytest.mark.xfail(strict=True, reason="windowed MSE fluctuates by 1-40% step to step; the decrease holds only on average")
    def test_windowed_mse_strictly_nonincreasing(self):
        t = make_task("dim", 0)
        b = make_bridge("irsde")
        tr = irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(0, "r"))
        s = np.array([r.state_mse for r in tr.records])
        w = np.convolve(s, np.ones(10) / 10, "valid")[len(s) // 2 :]
        assert np.all(np.diff(w) <= 0)


class TestGenerative:
    def test_perfect_denoiser(self):
        t = make_task("dim", 0)
        tr = generative_run(t, 50, make_denoiser("perfect", t), GEN, substream(0, "g"))
        assert tr.final_mse < 1e-20

    def test_antithetic_pair_averages_to_posterior_mean(self):
        # with f = 0 at the start, the deterministic map is odd around the posterior mean
        t = gaussian_task()
        rf = make_path("rf")
        post = condition_prior(t.prior, t.degradation, t.x_lq).means[0]
        z = substream(0, "z").standard_normal(2)
        outs = [generative_run(t, 100, make_denoiser("cond", t), rf, _Fixed(s * z)).final_estimate for s in (1, -1)]
        np.testing.assert_allclose(0.5 * (outs[0] + outs[1]), post, atol=1e-6)


class TestBridgeNative:
    def test_zero_diffusion_step(self):
        p = BridgeParams(theta_bar_fn=lambda t: 0.0 * t, theta_fn=lambda t: 0.0 * t)
        x = np.array([1.0, 2.0])
        assert np.array_equal(bridge_native_reverse_step(x, 0.5, 0.01, p, None, None, np.zeros(2)), x)

    def test_posterior_moments(self):
        t = gaussian_task()
        post = condition_prior(t.prior, t.degradation, t.x_lq)
        b = make_bridge("irsde", lam=1.0)
        tr = bridge_native_run(t, 500, make_denoiser("cond", t), b, substream(0, "n"), n_samples=20_000)
        s = tr.final_estimate
        np.testing.assert_allclose(s.mean(0), post.means[0], rtol=0.03)
        np.testing.assert_allclose(np.diag(np.cov(s.T)), np.diag(post.covariances[0]), rtol=0.03)

    def test_independent_of_other_runs(self):
        t = make_task("gmm", 0)
        b = make_bridge("irsde")
        a = bridge_native_run(t, 30, make_denoiser("cond", t), b, substream(0, "n"))
        irbridge_run(t, default_schedule(b, GEN), make_denoiser("cond", t), b, GEN, substream(0, "r"))
        c = bridge_native_run(t, 30, make_denoiser("cond", t), b, substream(0, "n"))
        assert np.array_equal(a.final_estimate, c.final_estimate)
