"""WGAN update rules, training-loop contracts, and checkpoint/resume."""

import json

import numpy as np
import pytest

from densbench.diffnet.net import DenseNet, DenseNetConfig
from densbench.metrics import w1_critic, w1_direct
from densbench.synthdata import DatasetHandle, UnimodalSpec
from densbench.wgan import (TrainState, WganConfig, critic_update, evaluate,
                            generator_update, train)

TINY = dict(width=8, depth=2, batch_size=64, total_generator_steps=20,
            eval_every=10, eval_samples=2000)


def tiny_config(**over):
    base = dict(prior="gaussian", prior_dim=2, activation="leaky_relu",
                lipschitz="spectral_norm", n_critic=2, lr=1e-3, **TINY)
    base.update(over)
    return WganConfig(**base)


def identity_like(state, w=1.0):
    """Overwrite the critic with c(x) = w*x and the generator with g(z) = 0."""
    cfg_c = state.critic.config
    assert cfg_c.activation in ("identity",)
    for name in state.critic.params:
        state.critic.params[name][:] = 0.0
    state.critic.params["W0"][0, 0] = w
    hidden = state.critic.params["W1"] if cfg_c.depth == 1 else None
    state.critic.params[f"W{cfg_c.depth}"][0, 0] = 1.0
    for name in state.generator.params:
        state.generator.params[name][:] = 0.0
    return state


class TestCriticUpdate:
    def test_linear_critic_loss_value_and_zero_penalty(self):
        # c(x) = x with gradient penalty: grad norm is exactly 1 so only the
        # Wasserstein term mean c(fake) - mean c(real) = 0 - 1 = -1 remains
        cfg = tiny_config(activation="identity", lipschitz="gradient_penalty",
                          gp_weight=10.0, width=1, depth=1, lr=1e-12)
        state = TrainState.fresh(cfg, seed=0)
        identity_like(state)
        loss = critic_update(state, np.array([1.0]), cfg)
        assert loss == pytest.approx(-1.0, abs=1e-12)

    def test_real_equals_fake_leaves_only_penalty(self):
        cfg = tiny_config(activation="identity", lipschitz="gradient_penalty",
                          gp_weight=7.0, width=1, depth=1, lr=1e-12)
        state = TrainState.fresh(cfg, seed=0)
        identity_like(state, w=3.0)  # grad norm 3 -> penalty 7*(3-1)^2 = 28
        real = np.zeros(16)          # generator emits zeros too
        loss = critic_update(state, real, cfg)
        assert loss == pytest.approx(28.0, abs=1e-9)

    def test_generator_untouched_bitwise(self):
        cfg = tiny_config()
        state = TrainState.fresh(cfg, seed=1)
        before = {k: v.copy() for k, v in state.generator.params.items()}
        data = DatasetHandle(UnimodalSpec(), 5)
        for _ in range(3):
            critic_update(state, data.sample(cfg.batch_size), cfg)
        for k, v in state.generator.params.items():
            assert np.array_equal(v, before[k])

    def test_critic_actually_learns_separation(self):
        cfg = tiny_config(n_critic=1, lr=1e-2)
        state = TrainState.fresh(cfg, seed=2)
        data = DatasetHandle(UnimodalSpec(), 6)
        for _ in range(50):
            critic_update(state, data.sample(cfg.batch_size), cfg)
        critic = state.critic_fn(refresh_sn=True)
        real = data.sample(2000)
        fake = state.sample_generator(2000, state.eval_rng)
        assert w1_critic(critic, real, fake) > 0.1


class TestGeneratorUpdate:
    def test_zero_critic_means_zero_gradient(self):
        cfg = tiny_config(activation="identity", width=1, depth=1,
                          lipschitz="gradient_penalty", lr=1e-2)
        state = TrainState.fresh(cfg, seed=3)
        identity_like(state, w=0.0)
        state.critic.params[f"W{cfg.depth}"][:] = 0.0   # c == 0 exactly
        gen_before = {k: v.copy() for k, v in state.generator.params.items()}
        generator_update(state, cfg)
        for k, v in state.generator.params.items():
            assert np.array_equal(v, gen_before[k])

    def test_constant_generator_gradient_is_minus_one(self):
        # c(x) = x, g(z) = theta: loss = -theta so dloss/dtheta = -1
        cfg = tiny_config(activation="identity", width=1, depth=1,
                          lipschitz="gradient_penalty", lr=1e-6, beta1=0.0,
                          beta2=0.0)
        state = TrainState.fresh(cfg, seed=4)
        identity_like(state)
        theta0 = 0.7
        state.generator.params[f"b{cfg.depth}"][:] = theta0
        generator_update(state, cfg)
        # with beta1=beta2=0 and bias correction, the first Adam move is
        # -lr * sign(grad); gradient -1 pushes theta up
        assert state.generator.params[f"b{cfg.depth}"][0] > theta0
        moment = state.gen_opt.m[f"b{cfg.depth}"][0]
        assert moment == pytest.approx(-1.0, abs=1e-9)

    def test_critic_untouched_bitwise(self):
        cfg = tiny_config()
        state = TrainState.fresh(cfg, seed=5)
        before = {k: v.copy() for k, v in state.critic.params.items()}
        generator_update(state, cfg)
        for k, v in state.critic.params.items():
            assert np.array_equal(v, before[k])

    def test_batch_norm_mode_changes_loss(self):
        cfg = tiny_config(batch_norm=True)
        state = TrainState.fresh(cfg, seed=6)
        data = DatasetHandle(UnimodalSpec(), 7)
        state, _ = train(cfg, data, seed=6, state=state, target_steps=5)
        z = state.draw_prior(256, state.eval_rng)
        train_out = state.generator.forward_np(z, mode="train")
        eval_out = state.generator.forward_np(z, mode="eval")
        assert not np.allclose(train_out, eval_out)


class TestTrainLoop:
    def test_zero_steps_initial_eval_only(self):
        cfg = tiny_config(total_generator_steps=0)
        data = DatasetHandle(UnimodalSpec(), 8)
        state, record = train(cfg, data, seed=7)
        assert len(record.history) == 1
        assert record.history[0]["step"] == 0
        assert record.best_w1 == record.history[0]["true_w1"]

    def test_histories_and_best(self):
        cfg = tiny_config()
        data = DatasetHandle(UnimodalSpec(), 9)
        state, record = train(cfg, data, seed=8)
        steps = [h["step"] for h in record.history]
        assert steps == [0, 10, 20]
        assert all(h["critic_w1"] is not None for h in record.history)
        assert record.best_w1 == min(h["true_w1"] for h in record.history)
        assert record.failure is None

    def test_bit_identical_reruns(self):
        cfg = tiny_config()
        a = train(cfg, DatasetHandle(UnimodalSpec(), 10), seed=9)[1]
        b = train(cfg, DatasetHandle(UnimodalSpec(), 10), seed=9)[1]
        da = json.loads(a.to_json())
        db = json.loads(b.to_json())
        da.pop("wall_clock")
        db.pop("wall_clock")
        assert da == db

    def test_spectral_norm_bound_at_eval(self):
        from densbench.diffnet.net import power_iteration
        cfg = tiny_config(n_critic=3, lr=3e-3, total_generator_steps=30)
        data = DatasetHandle(UnimodalSpec(), 11)
        state, record = train(cfg, data, seed=10)
        state.critic.power_iterate(50)
        for i in range(cfg.depth + 1):
            w_eff = state.critic.effective_weight(i)
            top = np.linalg.svd(w_eff, compute_uv=False)[0]
            assert top <= 1 + 1e-3

    def test_critic_estimate_bounded_by_lipschitz_times_direct(self):
        # |Eq6| <= (measured Lipschitz along sampled pairs) * Eq5 + tol
        cfg = tiny_config(n_critic=2, total_generator_steps=20)
        data = DatasetHandle(UnimodalSpec(), 12)
        state, record = train(cfg, data, seed=11)
        critic = state.critic_fn(refresh_sn=True)
        real = data.sample(4000)
        fake = state.sample_generator(4000, state.eval_rng)
        direct = w1_direct(real, fake)
        est = w1_critic(critic, real, fake)
        xs = np.concatenate([real, fake])
        vals = critic(xs)
        order = np.argsort(xs)
        dx = np.diff(xs[order])
        dv = np.abs(np.diff(vals[order]))
        keep = dx > 1e-12
        lip = np.max(dv[keep] / dx[keep])
        assert abs(est) <= lip * direct + 1e-6

    def test_divergence_marks_failure_and_keeps_history(self):
        cfg = tiny_config(n_critic=1, total_generator_steps=40, eval_every=10)
        data = DatasetHandle(UnimodalSpec(), 13)
        state, _ = train(cfg, data, seed=12, target_steps=10)
        healthy_history = len(state.history)
        state.generator.params["b0"][0] = np.inf   # poisons every later batch
        state, record = train(cfg, data, seed=12, state=state)
        assert record.failure is not None
        assert "divergence detected" in record.failure
        # the finite metrics recorded before the poisoning survive
        assert len(record.history) >= healthy_history
        assert all(np.isfinite(h["true_w1"]) for h in record.history)


class TestCheckpointResume:
    def test_state_round_trip_bit_exact(self):
        cfg = tiny_config(batch_norm=False, dropout=0.2)
        data = DatasetHandle(UnimodalSpec(), 14)
        state, _ = train(cfg, data, seed=13, target_steps=10)
        doc = json.loads(json.dumps(state.to_doc()))
        back = TrainState.from_doc(doc)
        for k in state.generator.params:
            assert np.array_equal(back.generator.params[k],
                                  state.generator.params[k])
        for k in state.critic.params:
            assert np.array_equal(back.critic.params[k], state.critic.params[k])
        assert back.gen_opt.step == state.gen_opt.step
        from densbench.rng import rng_state
        assert rng_state(back.noise_rng) == rng_state(state.noise_rng)
        assert rng_state(back.eval_rng) == rng_state(state.eval_rng)

    def test_resume_equals_uninterrupted(self):
        from densbench.rng import restore_rng, rng_state
        cfg = tiny_config(n_critic=2)
        # uninterrupted run to 20 steps
        full_state, full_record = train(cfg, DatasetHandle(UnimodalSpec(), 15),
                                        seed=14, target_steps=20)
        # same run, checkpointed at 10 and resumed
        data = DatasetHandle(UnimodalSpec(), 15)
        half_state, _ = train(cfg, data, seed=14, target_steps=10)
        doc = json.loads(json.dumps({
            "state": half_state.to_doc(),
            "data_rng": rng_state(data._rng),
        }))
        resumed = TrainState.from_doc(doc["state"])
        data2 = DatasetHandle(UnimodalSpec(), 15)
        data2._rng = restore_rng(doc["data_rng"])
        resumed, resumed_record = train(cfg, data2, seed=14, state=resumed,
                                        target_steps=20)
        assert [h["true_w1"] for h in resumed_record.history] == \
               [h["true_w1"] for h in full_record.history]
        for k in full_state.generator.params:
            assert np.array_equal(resumed.generator.params[k],
                                  full_state.generator.params[k])


class TestConfigValidation:
    def test_rejects_bad_lipschitz(self):
        with pytest.raises(ValueError):
            tiny_config(lipschitz="weight_clipping")

    def test_rejects_nonpositive_gp(self):
        with pytest.raises(ValueError):
            tiny_config(lipschitz="gradient_penalty", gp_weight=0.0)

    def test_rejects_bad_n_critic(self):
        with pytest.raises(ValueError):
            tiny_config(n_critic=0)

    def test_dict_round_trip(self):
        cfg = tiny_config(cyclic=(1e-5, 1e-4, 100))
        assert WganConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
