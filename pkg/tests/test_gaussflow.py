"""Gaussianization-flow contracts: change of variables, inversion, training."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from densbench.diffnet import tape as T
from densbench.gaussflow import (CLAMP_EPS, GaussFlowModel, GaussLayer,
                                 GfConfig, flow_log_density_tape, init_flow,
                                 train)
from densbench.rng import make_rng
from densbench.synthdata import DatasetHandle, UnimodalSpec


def single_layer(logits, locs, log_scales):
    return GaussFlowModel([GaussLayer(np.asarray(logits, dtype=np.float64),
                                      np.asarray(locs, dtype=np.float64),
                                      np.asarray(log_scales, dtype=np.float64))])


from conftest import quantile_anchored_flow as random_model  # noqa: E402


class TestSingleLayer:
    def test_standard_logistic_center(self):
        m = single_layer([0.0], [0.0], [0.0])
        z, log_det = m.forward(np.array([0.0]))
        assert z[0] == pytest.approx(0.0, abs=1e-14)

    def test_density_is_logistic_pdf_at_zero(self):
        m = single_layer([0.0], [0.0], [0.0])
        dens = np.exp(m.log_density(np.array([0.0])))
        assert dens[0] == pytest.approx(0.25, rel=1e-10)

    def test_density_equals_mixture_density_everywhere(self, rng):
        m = single_layer(rng.normal(0, 1, 4), np.sort(rng.normal(0, 2, 4)),
                         rng.normal(-0.5, 0.3, 4))
        xs = rng.uniform(-8, 8, 100)
        w = m.layers[0].weights()
        oracle = np.log(sum(
            wk * stats.logistic.pdf(xs, loc=mu, scale=s)
            for wk, mu, s in zip(w, m.layers[0].locs, m.layers[0].scales())))
        assert np.allclose(m.log_density(xs), oracle, atol=1e-8)


class TestForward:
    def test_monotone(self, rng):
        for seed in range(5):
            m = random_model(3, 8, seed)
            xs = np.sort(rng.uniform(-6, 6, 300))
            z, _ = m.forward(xs)
            assert np.all(np.diff(z) > 0)

    def test_translation_equivariance(self, rng):
        m = random_model(2, 6, 11)
        xs = rng.uniform(-3, 3, 50)
        base = m.log_density(xs)
        c = 1.7
        shifted = GaussFlowModel([
            GaussLayer(m.layers[0].logits.copy(), m.layers[0].locs + c,
                       m.layers[0].log_scales.copy())
        ] + m.layers[1:])
        assert np.allclose(shifted.log_density(xs + c), base, atol=1e-10)

    def test_clamp_events_counted(self):
        m = single_layer([0.0], [0.0], [0.0])
        assert m.clamp_events == 0
        m.forward(np.array([1e5, -1e5]))
        assert m.clamp_events == 2


class TestNormalization:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_models_integrate_to_one(self, seed):
        m = random_model(3, 8, seed)
        val, _ = integrate.quad(lambda x: float(np.exp(m.log_density(np.array([x]))[0])),
                                -40, 40, limit=400)
        assert val == pytest.approx(1.0, abs=1e-3)


class TestInvert:
    def test_single_component_center(self):
        m = single_layer([0.0], [0.0], [0.0])
        assert m.invert(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_round_trip_random_stacks(self, seed, rng):
        m = random_model(3, 8, seed)
        z = rng.uniform(-4, 4, 1000)
        x = m.invert(z)
        z2, _ = m.forward(x)
        assert np.max(np.abs(z2 - z)) <= 1e-10

    def test_sampling_matches_density_level_w1(self):
        # sampler consistency: W1(samples, fresh data) should match the
        # density-level quality of the trained model
        from densbench.metrics import w1_direct
        data = DatasetHandle(UnimodalSpec(), 31)
        cfg = GfConfig(depth=2, components=16, steps=400, batch_size=256,
                       eval_every=400, eval_samples=20_000)
        model, record = train(cfg, data, seed=5)
        s = model.sample(50_000, make_rng(77))
        fresh = data.sample(50_000)
        w_samp = w1_direct(s, fresh)
        assert record.best_w1 < 0.05
        assert abs(w_samp - record.best_w1) < 0.02


class TestTrainingGraph:
    def test_tape_log_density_matches_numpy(self, rng):
        # the paths reduce in different orders and the probit magnifies
        # ulp-level CDF differences by exp(z^2/2); 1e-8 is the honest bound
        m = random_model(3, 8, 3)
        xs = rng.uniform(-4, 4, 64)
        tp = T.Tape()
        mean_logp, _, _ = flow_log_density_tape(tp, m, xs)
        assert float(mean_logp.value) == pytest.approx(
            float(np.mean(m.log_density(xs))), abs=1e-8)

    def test_gradients_match_finite_differences(self, rng):
        m = random_model(2, 4, 9)
        xs = rng.uniform(-3, 3, 32)

        def loss():
            tp = T.Tape()
            mean_logp, _, _ = flow_log_density_tape(tp, m, xs)
            return float(mean_logp.value)

        tp = T.Tape()
        mean_logp, leaves, _ = flow_log_density_tape(tp, m, xs)
        T.backward(tp, mean_logp)
        grads = {n: tp.grad(l) for n, l in leaves.items()}
        worst = 0.0
        for name, leaf in leaves.items():
            layer_idx = int(name[-1])
            attr = {"logits": "logits", "locs": "locs",
                    "log_scales": "log_scales"}[name[:-1]]
            p = getattr(m.layers[layer_idx], attr)
            for idx in range(p.size):
                h = 1e-6 * max(1.0, abs(p[idx]))
                orig = p[idx]
                p[idx] = orig + h
                fp = loss()
                p[idx] = orig - h
                fm = loss()
                p[idx] = orig
                fd = (fp - fm) / (2 * h)
                g = grads[name][idx]
                worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-4))
        assert worst < 1e-5, f"worst relative error {worst}"


class TestInit:
    def test_first_layer_spans_data_quantiles(self):
        pilot = DatasetHandle(UnimodalSpec(), 3).sample(10_000)
        m = init_flow(3, 16, pilot)
        locs = m.layers[0].locs
        assert locs[0] >= 4.4 and locs[-1] <= 5.6
        assert np.all(np.diff(locs) >= 0)
        assert np.all(m.layers[0].logits == 0.0)

    def test_deep_layers_near_identity(self):
        # identity-tracking holds on the bulk of the standard normal; tails
        # deliberately overshoot (light logistic tails), which keeps the
        # inverse map contracting and the stack invertible from a cold start
        pilot = make_rng(0).normal(0, 1, 10_000)
        m = init_flow(4, 32, pilot)
        deep = GaussFlowModel(m.layers[1:])
        xs = np.linspace(-2, 2, 101)
        z, _ = deep.forward(xs)
        assert np.max(np.abs(z - xs)) < 0.25
        # strictly increasing until the tails hit the CDF clamp plateau
        z3, _ = deep.forward(np.linspace(-3, 3, 201))
        assert np.all(np.diff(z3) > 0)
        z4, _ = deep.forward(np.linspace(-4.5, 4.5, 201))
        assert np.all(np.diff(z4) >= 0)
        x_back = deep.invert(np.linspace(-4.5, 4.5, 101))
        assert np.all(np.isfinite(x_back))

    def test_validation(self):
        with pytest.raises(ValueError):
            init_flow(0, 4, np.zeros(10))
        with pytest.raises(ValueError):
            GfConfig(depth=0)


class TestTrainK1Gaussian:
    def test_matches_grid_search_oracle(self):
        # fitting one logistic to a standard normal: brute-force the best
        # (loc, scale) on a grid and compare the trained log-likelihood
        class GaussianHandle:
            def __init__(self, seed):
                self.rng = make_rng(seed)

            def sample(self, n):
                return self.rng.normal(0.0, 1.0, n)

        data = GaussianHandle(13)
        cfg = GfConfig(depth=1, components=1, steps=1500, batch_size=512,
                       lr=3e-3, eval_every=1500, eval_samples=2000,
                       pilot_samples=4000)
        model, record = train(cfg, data, seed=3)
        layer = model.layers[0]
        holdout = make_rng(55).normal(0, 1, 50_000)
        trained_ll = float(np.mean(model.log_density(holdout)))

        best_ll = -np.inf
        best = None
        for loc in np.linspace(-0.3, 0.3, 13):
            for scale in np.geomspace(0.3, 1.2, 25):
                ll = float(np.mean(stats.logistic.logpdf(holdout, loc, scale)))
                if ll > best_ll:
                    best_ll, best = ll, (loc, scale)
        assert trained_ll >= best_ll - 0.01
        assert abs(layer.locs[0] - best[0]) < 0.1
        assert abs(layer.scales()[0] - best[1]) < 0.1


@pytest.mark.slow
class TestTrainUnimodal:
    def test_likelihood_ascends_and_w1_drops(self):
        data = DatasetHandle(UnimodalSpec(), 71)
        cfg = GfConfig(depth=3, components=32, steps=1200, batch_size=256,
                       eval_every=400, eval_samples=50_000)
        model, record = train(cfg, data, seed=2)
        assert record.failure is None
        assert record.best_w1 < 0.01
        w1s = [h["true_w1"] for h in record.history]
        assert w1s[-1] < w1s[0]
        assert record.best_w1 == min(w1s)
