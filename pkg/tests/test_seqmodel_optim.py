"""RMSprop update rule."""

import math

import numpy as np
import pytest

from affectfusion.seqmodel import (
    ModelConfig,
    RmspropState,
    TrainConfig,
    init_params,
    rmsprop_step,
)


def tiny_setup(seed=0):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(input_dim=2, lstm_units=(3,), dropout_rate=0.0)
    params = init_params(cfg, rng)
    return cfg, params


class TestRmsprop:
    def test_zero_gradient_leaves_params_unchanged(self):
        _, params = tiny_setup()
        grads = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
        state = RmspropState.zeros_like(params)
        state.v[0][:] = 0.5
        cfg = TrainConfig(learning_rate=0.1, rmsprop_decay=0.9)
        new_params, new_state = rmsprop_step(params, grads, state, cfg)
        for a, b in zip(params.arrays(), new_params.arrays()):
            assert np.array_equal(a, b)
        assert new_state.v[0] == pytest.approx(0.45)  # decayed

    def test_hand_computed_scalar_step(self):
        # p=1, g=1, v=0, lr=0.1, decay=0.9, eps=1e-7
        _, params = tiny_setup()
        arrays = [np.zeros_like(a) for a in params.arrays()]
        params = params.with_arrays([np.ones_like(a) for a in arrays])
        grads = params.with_arrays([np.ones_like(a) for a in arrays])
        state = RmspropState.zeros_like(params)
        cfg = TrainConfig(learning_rate=0.1, rmsprop_decay=0.9, rmsprop_epsilon=1e-7)
        new_params, new_state = rmsprop_step(params, grads, state, cfg)
        expected_v = 0.1
        expected_p = 1.0 - 0.1 * 1.0 / (math.sqrt(0.1) + 1e-7)
        assert new_state.v[0] == pytest.approx(np.full_like(state.v[0], expected_v), rel=1e-15)
        assert new_params.arrays()[0] == pytest.approx(
            np.full_like(state.v[0], expected_p), rel=1e-15
        )

    def test_repeated_steps_grow_v_toward_g_squared(self):
        _, params = tiny_setup()
        grads = params.with_arrays([np.full_like(a, 2.0) for a in params.arrays()])
        state = RmspropState.zeros_like(params)
        cfg = TrainConfig(learning_rate=0.01)
        v_prev = 0.0
        p = params
        for _ in range(5):
            p, state = rmsprop_step(p, grads, state, cfg)
            v_now = float(state.v[0].flat[0])
            assert v_now > v_prev
            assert v_now < 4.0  # g^2
            v_prev = v_now

    def test_nonfinite_gradient_raises(self):
        _, params = tiny_setup()
        bad = [np.zeros_like(a) for a in params.arrays()]
        bad[0].flat[0] = np.nan
        grads = params.with_arrays(bad)
        state = RmspropState.zeros_like(params)
        with pytest.raises(ValueError, match="finite"):
            rmsprop_step(params, grads, state, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(rmsprop_decay=1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)

    def test_defaults_follow_training_recipe(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 0.0005
        assert cfg.batch_size == 34
        assert cfg.epochs == 50
        assert cfg.rmsprop_decay == 0.9
        assert cfg.rmsprop_epsilon == 1e-7
        assert cfg.weights.as_array() == pytest.approx([0.7, 0.2, 1.0])
