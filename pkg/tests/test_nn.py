import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_rel_err, numeric_grad
from metaexplore.nn import (
    LN_EPS,
    AdamState,
    ConfigurationError,
    GradientBundle,
    MlpParams,
    NonFiniteGradientError,
    adam_step,
    init_mlp,
    layer_norm_backward,
    layer_norm_forward,
    mlp_backward,
    mlp_forward,
)


def reference_forward(params, x):
    """Loop-based forward pass written independently of the vectorized one."""
    h = list(map(float, x))
    n_layers = len(params.weights)
    for k in range(n_layers):
        W, b = params.weights[k], params.biases[k]
        z = [sum(W[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(W.shape[0])]
        if k < n_layers - 1:
            if params.layer_norm:
                mu = sum(z) / len(z)
                var = sum((v - mu) ** 2 for v in z) / len(z)
                g, s = params.layernorm_gains[k], params.layernorm_shifts[k]
                z = [g[i] * (z[i] - mu) / math.sqrt(var + LN_EPS) + s[i] for i in range(len(z))]
            h = [math.tanh(v) for v in z]
        else:
            h = [math.tanh(v) for v in z] if params.output_activation == "tanh" else z
    return np.array(h)


def random_net(rng, sizes, act="linear", layer_norm=True):
    net = init_mlp(sizes, rng, act, layer_norm, final_scale=None)
    net.flat += 0.2 * rng.standard_normal(net.flat.shape)
    return net


class TestMlpParams:
    def test_shapes_follow_layer_sizes(self):
        p = MlpParams((3, 5, 4, 2))
        assert [w.shape for w in p.weights] == [(5, 3), (4, 5), (2, 4)]
        assert [b.shape for b in p.biases] == [(5,), (4,), (2,)]
        assert [g.shape for g in p.layernorm_gains] == [(5,), (4,)]
        assert [s.shape for s in p.layernorm_shifts] == [(5,), (4,)]
        assert p.flat.shape == (3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2 + 2 * (5 + 4),)

    def test_no_layernorm_vectors_without_hidden_layers(self):
        p = MlpParams((2, 2))
        assert p.layernorm_gains == [] and p.layernorm_shifts == []

    def test_views_share_the_flat_buffer(self):
        p = MlpParams((2, 3, 1))
        p.weights[0][1, 1] = 7.0
        assert 7.0 in p.flat

    @pytest.mark.parametrize("sizes", [(3,), (0, 2), (2, -1, 1)])
    def test_invalid_sizes(self, sizes):
        with pytest.raises(ConfigurationError):
            MlpParams(sizes)

    def test_init_bounds(self, rng):
        p = init_mlp((4, 64, 64, 1), rng, "tanh")
        assert np.all(np.abs(p.weights[0]) <= 1 / 2)
        assert np.all(np.abs(p.weights[1]) <= 1 / 8)
        assert np.all(np.abs(p.weights[2]) <= 3e-3)
        assert np.all(p.layernorm_gains[0] == 1.0) and np.all(p.layernorm_shifts[0] == 0.0)
        assert p.is_finite()


class TestForward:
    def test_zero_params_give_zero_output(self):
        p = MlpParams((3, 8, 8, 2))
        p.flat[:] = 0.0
        out, _ = mlp_forward(p, np.array([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_single_linear_layer(self):
        p = MlpParams((2, 2))
        p.weights[0][:] = [[1, 2], [3, 4]]
        out, _ = mlp_forward(p, np.array([1.0, 1.0]))
        np.testing.assert_array_equal(out, [3.0, 7.0])

    @pytest.mark.parametrize("act", ["linear", "tanh"])
    @pytest.mark.parametrize("layer_norm", [True, False])
    def test_matches_reference(self, rng, act, layer_norm):
        p = random_net(rng, (4, 7, 5, 3), act, layer_norm)
        for _ in range(5):
            x = rng.standard_normal(4)
            out, _ = mlp_forward(p, x)
            np.testing.assert_allclose(out, reference_forward(p, x), rtol=1e-12, atol=1e-12)

    def test_batch_rows_match_single(self, rng):
        p = random_net(rng, (3, 6, 6, 2))
        X = rng.standard_normal((5, 3))
        batch, _ = mlp_forward(p, X)
        for i in range(5):
            np.testing.assert_allclose(batch[i], mlp_forward(p, X[i])[0], rtol=1e-13, atol=1e-15)

    def test_deterministic(self, rng):
        p = random_net(rng, (3, 64, 64, 1))
        x = rng.standard_normal(3)
        a, _ = mlp_forward(p, x)
        b, _ = mlp_forward(p, x)
        assert a.tobytes() == b.tobytes()

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            mlp_forward(MlpParams((3, 4, 1)), np.zeros(2))


class TestBackward:
    def test_zero_output_grad(self, rng):
        p = random_net(rng, (3, 5, 5, 2))
        _, cache = mlp_forward(p, rng.standard_normal(3))
        grads, d_x = mlp_backward(p, cache, np.zeros(2))
        assert np.all(grads.flat == 0) and np.all(d_x == 0)

    def test_linear_layer_weight_grad_is_input(self):
        p = MlpParams((3, 1))
        p.flat[:] = [0.5, -1.0, 2.0, 0.1]
        x = np.array([1.5, -2.0, 0.25])
        _, cache = mlp_forward(p, x)
        grads, d_x = mlp_backward(p, cache, np.ones(1))
        np.testing.assert_array_equal(grads.weights[0][0], x)
        np.testing.assert_array_equal(grads.biases[0], [1.0])
        np.testing.assert_array_equal(d_x, p.weights[0][0])

    @pytest.mark.parametrize("act", ["linear", "tanh"])
    @pytest.mark.parametrize("layer_norm", [True, False])
    def test_every_coordinate_matches_finite_differences(self, rng, act, layer_norm):
        p = random_net(rng, (4, 9, 7, 2), act, layer_norm)
        x = rng.standard_normal(4)
        c = rng.standard_normal(2)
        _, cache = mlp_forward(p, x)
        grads, d_x = mlp_backward(p, cache, c)
        f = lambda: float(mlp_forward(p, x)[0] @ c)
        assert max_rel_err(grads.flat, numeric_grad(f, p.flat)) < 1e-4
        assert max_rel_err(d_x, numeric_grad(f, x)) < 1e-4

    def test_full_size_critic_every_coordinate(self, rng):
        p = random_net(rng, (4, 64, 64, 1))
        x = rng.standard_normal(4)
        _, cache = mlp_forward(p, x)
        grads, _ = mlp_backward(p, cache, np.ones(1))
        f = lambda: float(mlp_forward(p, x)[0][0])
        assert max_rel_err(grads.flat, numeric_grad(f, p.flat)) < 1e-4

    def test_batched_gradient_is_sum_of_rows(self, rng):
        p = random_net(rng, (3, 5, 4, 2))
        X = rng.standard_normal((6, 3))
        G = rng.standard_normal((6, 2))
        _, cache = mlp_forward(p, X)
        total, d_X = mlp_backward(p, cache, G)
        acc = np.zeros_like(total.flat)
        for i in range(6):
            _, c = mlp_forward(p, X[i])
            g, d_x = mlp_backward(p, c, G[i])
            acc += g.flat
            np.testing.assert_allclose(d_X[i], d_x, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(total.flat, acc, rtol=1e-12, atol=1e-14)

    def test_shape_mismatch(self, rng):
        p = random_net(rng, (3, 4, 2))
        _, cache = mlp_forward(p, np.zeros(3))
        with pytest.raises(ConfigurationError):
            mlp_backward(p, cache, np.zeros(3))


class TestLayerNorm:
    def test_constant_input(self):
        y, _ = layer_norm_forward(np.full(5, 3.2), np.ones(5), np.zeros(5))
        np.testing.assert_allclose(y, 0.0, atol=1e-12)

    def test_already_normalized(self):
        y, _ = layer_norm_forward(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(y, [1.0, -1.0], rtol=1e-10)
        y, _ = layer_norm_forward(np.array([1.0, -1.0]), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(y, np.array([1.0, -1.0]) / np.sqrt(1 + LN_EPS), rtol=1e-14)

    def test_length_one_rejected(self):
        with pytest.raises(ConfigurationError):
            layer_norm_forward(np.array([1.0]), np.ones(1), np.zeros(1))

    def test_backward_matches_finite_differences(self, rng):
        x = rng.standard_normal(6)
        gain = rng.standard_normal(6)
        shift = rng.standard_normal(6)
        c = rng.standard_normal(6)
        y, cache = layer_norm_forward(x, gain, shift)
        d_x, d_gain, d_shift = layer_norm_backward(cache, c)
        f = lambda: float(layer_norm_forward(x, gain, shift)[0] @ c)
        assert max_rel_err(d_x, numeric_grad(f, x)) < 1e-4
        assert max_rel_err(d_gain, numeric_grad(f, gain)) < 1e-4
        assert max_rel_err(d_shift, numeric_grad(f, shift)) < 1e-4


class _Vec:
    def __init__(self, values):
        self.flat = np.array(values, dtype=np.float64)


class TestAdam:
    def test_zero_gradient_fresh_state(self, rng):
        p = random_net(rng, (2, 3, 1))
        before = p.flat.copy()
        state = AdamState.for_params(p, 1e-3)
        adam_step(p, GradientBundle(p.layout), state)
        np.testing.assert_array_equal(p.flat, before)
        assert state.step_count == 1

    @pytest.mark.parametrize("g", [0.37, -2.5, 1e-3])
    def test_first_step_closed_form(self, g):
        p = _Vec([1.0])
        state = AdamState.for_params(p, 1e-3)
        adam_step(p, GradientBundle(None, np.array([g])), state)
        # m_hat = g and v_hat = g^2 after one bias-corrected step
        assert p.flat[0] == pytest.approx(1.0 - 1e-3 * g / (abs(g) + 1e-8), rel=0, abs=1e-15)
        assert abs(p.flat[0] - 1.0) == pytest.approx(1e-3, rel=1e-4)

    def test_two_step_hand_trace(self):
        g1, g2, lr = 0.5, -1.0, 1e-3
        p = _Vec([0.0])
        state = AdamState.for_params(p, lr)
        adam_step(p, GradientBundle(None, np.array([g1])), state)
        adam_step(p, GradientBundle(None, np.array([g2])), state)
        m1, v1 = 0.1 * g1, 0.001 * g1 ** 2
        x1 = -lr * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
        m2, v2 = 0.9 * m1 + 0.1 * g2, 0.999 * v1 + 0.001 * g2 ** 2
        x2 = x1 - lr * (m2 / (1 - 0.9 ** 2)) / (math.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
        assert p.flat[0] == pytest.approx(x2, rel=1e-12)
        assert state.step_count == 2

    def test_two_steps_constant_gradient(self):
        p = _Vec([0.0])
        state = AdamState.for_params(p, 1e-3)
        for _ in range(2):
            adam_step(p, GradientBundle(None, np.array([0.5])), state)
        # bias correction makes every constant-gradient step exactly lr * g / (|g| + eps)
        assert p.flat[0] == pytest.approx(-2 * 1e-3 * 0.5 / (0.5 + 1e-8), rel=1e-12)

    def test_maximize_ascends(self):
        p = _Vec([0.0])
        adam_step(p, GradientBundle(None, np.array([2.0])), AdamState.for_params(p, 0.1), maximize=True)
        assert p.flat[0] > 0

    def test_non_finite_rejected_without_side_effects(self):
        p = _Vec([1.0, 2.0])
        state = AdamState.for_params(p, 1e-3)
        with pytest.raises(NonFiniteGradientError):
            adam_step(p, GradientBundle(None, np.array([np.nan, 1.0])), state)
        assert state.step_count == 0
        np.testing.assert_array_equal(p.flat, [1.0, 2.0])
        np.testing.assert_array_equal(state.first_moment, 0.0)

    def test_clip_norm(self):
        p = _Vec([0.0, 0.0])
        state = AdamState.for_params(p, 1.0)
        adam_step(p, GradientBundle(None, np.array([30.0, 40.0])), state, clip_norm=5.0)
        np.testing.assert_allclose(state.first_moment, [0.3, 0.4])

    def test_shape_mismatch(self):
        p = _Vec([0.0, 0.0])
        with pytest.raises(ConfigurationError):
            adam_step(p, GradientBundle(None, np.zeros(3)), AdamState.for_params(p, 1e-3))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=8), st.integers(1, 5))
    def test_zero_learning_rate_is_identity(self, grads, steps):
        p = _Vec(np.linspace(-1, 1, len(grads)))
        before = p.flat.copy()
        state = AdamState.for_params(p, 0.0)
        for _ in range(steps):
            adam_step(p, GradientBundle(None, np.array(grads)), state)
        np.testing.assert_array_equal(p.flat, before)
        assert state.step_count == steps
