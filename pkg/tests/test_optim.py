"""Adam update, cyclic schedule, and divergence gating."""

import numpy as np
import pytest

from densbench.diffnet.optim import (AdamConfig, AdamState, DivergenceError,
                                     adam_step, cyclic_lr)


def test_zero_gradient_no_decay_is_noop():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    state = AdamState(AdamConfig(lr=0.1))
    before = params["w"].copy()
    adam_step(state, params, {"w": np.zeros(3)})
    assert np.array_equal(params["w"], before)


def test_first_step_magnitude_bounded_by_lr():
    lr = 1e-2
    params = {"w": np.zeros(4)}
    state = AdamState(AdamConfig(lr=lr))
    g = np.array([1e-3, 1.0, -40.0, 1e3])
    adam_step(state, params, {"w": g})
    # bias-corrected first step is a sign-like move of size <= lr (up to eps)
    assert np.all(np.abs(params["w"]) <= lr * (1 + 1e-6))
    assert np.all(np.sign(params["w"]) == -np.sign(g))
    assert np.min(np.abs(params["w"])) > 0.9 * lr


def test_cyclic_schedule_values():
    cyc = (1e-4, 1e-3, 100)
    assert cyclic_lr(cyc, 0) == pytest.approx(1e-4)
    assert cyclic_lr(cyc, 50) == pytest.approx(1e-3)
    assert cyclic_lr(cyc, 100) == pytest.approx(1e-4)
    assert cyclic_lr(cyc, 25) == pytest.approx((1e-4 + 1e-3) / 2)

    state = AdamState(AdamConfig(lr=5.0, cyclic=cyc))
    state.step = 50
    assert state.current_lr() == pytest.approx(1e-3)
    state.step = 100
    assert state.current_lr() == pytest.approx(1e-4)


def test_divergence_detection_carries_step():
    params = {"w": np.zeros(2)}
    state = AdamState(AdamConfig(lr=0.1))
    adam_step(state, params, {"w": np.ones(2)})
    with pytest.raises(DivergenceError, match="divergence detected") as exc:
        adam_step(state, params, {"w": np.array([1.0, np.nan])})
    assert exc.value.step == 2


def test_decoupled_weight_decay():
    # with zero gradient, decay shrinks parameters multiplicatively and the
    # moment buffers stay empty (decay never enters m/v)
    params = {"w": np.array([2.0])}
    state = AdamState(AdamConfig(lr=0.5, weight_decay=0.1))
    adam_step(state, params, {"w": np.zeros(1)})
    assert params["w"][0] == pytest.approx(2.0 * (1 - 0.05))
    assert np.all(state.m["w"] == 0.0) and np.all(state.v["w"] == 0.0)


def test_moments_match_reference_formula(rng):
    cfg = AdamConfig(lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    params = {"w": rng.normal(0, 1, 5)}
    shadow = params["w"].copy()
    state = AdamState(cfg)
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 30):
        g = rng.normal(0, 1, 5)
        adam_step(state, params, {"w": g})
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mh = m / (1 - cfg.beta1 ** t)
        vh = v / (1 - cfg.beta2 ** t)
        shadow -= cfg.lr * mh / (np.sqrt(vh) + cfg.eps)
    assert np.allclose(params["w"], shadow, rtol=1e-12)


def test_state_round_trip():
    import json
    state = AdamState(AdamConfig(lr=0.3, cyclic=(0.1, 0.2, 10)))
    adam_step(state, {"w": np.ones(3)}, {"w": np.full(3, 0.5)})
    doc = json.loads(json.dumps(state.to_doc()))
    back = AdamState.from_doc(doc)
    assert back.config == state.config
    assert back.step == state.step
    assert np.array_equal(back.m["w"], state.m["w"])
    assert np.array_equal(back.v["w"], state.v["w"])


def test_bad_configs_rejected():
    with pytest.raises(ValueError):
        AdamConfig(lr=-1.0)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(cyclic=(1.0, 0.5, 10))
