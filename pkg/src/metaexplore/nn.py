"""Dense networks with layer normalization, exact backpropagation and Adam.

All parameters of a network live in one flat float64 vector; the per-layer
weight matrices, biases and layer-norm vectors are views into it. This keeps
optimizer steps, target tracking and serialization to single vector ops.

Conventions: a weight matrix of layer k has shape (size[k+1], size[k]) so a
single input vector x maps to W @ x + b. Inputs may be a vector or a 2-D batch
with one row per sample; batched gradients are summed over rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LN_EPS = 1e-5
ACTIVATIONS = ("linear", "tanh")


class ConfigurationError(ValueError):
    """Shapes, sizes or options that cannot describe a valid computation."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient or loss contained NaN or inf."""


class MlpLayout:
    """Offsets of every parameter tensor inside a flat vector."""

    def __init__(self, layer_sizes, layer_norm=True):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {layer_sizes!r}")
        if layer_norm and any(s < 2 for s in sizes[1:-1]):
            raise ConfigurationError("layer norm needs hidden layers of width >= 2")
        self.layer_sizes = sizes
        self.layer_norm = bool(layer_norm)
        self.n_hidden = len(sizes) - 2
        self._slots = []
        offset = 0
        for k in range(len(sizes) - 1):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            self._slots.append(("weight", (fan_out, fan_in), offset, fan_out * fan_in))
            offset += fan_out * fan_in
            self._slots.append(("bias", (fan_out,), offset, fan_out))
            offset += fan_out
        if self.layer_norm:
            for k in range(self.n_hidden):
                width = sizes[k + 1]
                self._slots.append(("gain", (width,), offset, width))
                offset += width
                self._slots.append(("shift", (width,), offset, width))
                offset += width
        self.size = offset

    def __eq__(self, other):
        return (
            isinstance(other, MlpLayout)
            and self.layer_sizes == other.layer_sizes
            and self.layer_norm == other.layer_norm
        )

    def views(self, flat):
        out = {"weight": [], "bias": [], "gain": [], "shift": []}
        for kind, shape, offset, n in self._slots:
            out[kind].append(flat[offset:offset + n].reshape(shape))
        return out


class _FlatTensors:
    """Named per-layer views over a flat vector."""

    def __init__(self, layout: MlpLayout, flat=None):
        self.layout = layout
        if flat is None:
            flat = np.zeros(layout.size)
        if flat.dtype != np.float64 or flat.shape != (layout.size,):
            raise ConfigurationError(
                f"flat buffer must be float64 of shape ({layout.size},), got {flat.dtype} {flat.shape}"
            )
        self.flat = flat
        views = layout.views(flat)
        self.weights = views["weight"]
        self.biases = views["bias"]
        self.layernorm_gains = views["gain"]
        self.layernorm_shifts = views["shift"]

    @property
    def layer_sizes(self):
        return self.layout.layer_sizes


class GradientBundle(_FlatTensors):
    """Gradient of a scalar with respect to every parameter of a network.

    When ``layout`` is None the bundle is a bare flat vector, which is how
    gradients over composite parameter sets (e.g. a teacher policy made of
    two networks) are carried.
    """

    def __init__(self, layout: MlpLayout | None, flat=None):
        if layout is None:
            if flat is None or flat.ndim != 1:
                raise ConfigurationError("a layout-free gradient needs a 1-D flat vector")
            self.layout = None
            self.flat = np.asarray(flat, dtype=np.float64)
            self.weights = self.biases = self.layernorm_gains = self.layernorm_shifts = []
        else:
            super().__init__(layout, flat)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.flat)))

    def norm(self):
        return float(np.linalg.norm(self.flat))

    def scaled(self, factor):
        return GradientBundle(self.layout, self.flat * factor)


class MlpParams(_FlatTensors):
    """Parameters of a multilayer perceptron.

    Hidden layers apply ``tanh(layer_norm(W x + b))``; the output layer
    applies ``output_activation`` (``linear`` or ``tanh``) to ``W x + b``.
    """

    def __init__(self, layer_sizes, output_activation="linear", layer_norm=True, flat=None):
        if output_activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {output_activation!r}")
        self.output_activation = output_activation
        super().__init__(MlpLayout(layer_sizes, layer_norm), flat)
        if flat is None:
            for gain in self.layernorm_gains:
                gain[:] = 1.0

    @property
    def layer_norm(self):
        return self.layout.layer_norm

    @property
    def hidden_activation(self):
        return "tanh"

    def copy(self):
        return MlpParams(self.layer_sizes, self.output_activation, self.layer_norm, self.flat.copy())

    def rebind(self, flat):
        """Same architecture, parameters stored in ``flat`` (no copy)."""
        return MlpParams(self.layer_sizes, self.output_activation, self.layer_norm, flat)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.flat)))


def init_mlp(layer_sizes, rng, output_activation="linear", layer_norm=True, final_scale=3e-3):
    """Fan-in uniform initialization; the last layer is drawn from +-final_scale.

    ``final_scale=None`` treats the output layer like a hidden one.
    """
    params = MlpParams(layer_sizes, output_activation, layer_norm)
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        bound = 1.0 / np.sqrt(w.shape[1])
        if k == last and final_scale is not None:
            bound = final_scale
        w[:] = rng.uniform(-bound, bound, size=w.shape)
        b[:] = rng.uniform(-bound, bound, size=b.shape)
    return params


def layer_norm_forward(x, gain, shift, eps=LN_EPS):
    """Normalize each row of ``x`` to zero mean and unit variance, then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ConfigurationError("layer norm is undefined for length-1 inputs")
    if np.shape(gain) != x.shape[-1:] or np.shape(shift) != x.shape[-1:]:
        raise ConfigurationError("gain and shift must match the normalized width")
    inv_n = 1.0 / x.shape[-1]
    centered = x - x.sum(axis=-1, keepdims=True) * inv_n
    inv_std = 1.0 / np.sqrt((centered * centered).sum(axis=-1, keepdims=True) * inv_n + eps)
    x_hat = centered * inv_std
    return x_hat * gain + shift, (x_hat, inv_std, gain)


def layer_norm_backward(cache, grad_out):
    """Returns (input gradient, gain gradient, shift gradient); batch rows are summed."""
    x_hat, inv_std, gain = cache
    grad_out = np.asarray(grad_out, dtype=np.float64)
    batch_axes = tuple(range(grad_out.ndim - 1))
    d_gain = (grad_out * x_hat).sum(axis=batch_axes)
    d_shift = grad_out.sum(axis=batch_axes)
    d_hat = grad_out * gain
    inv_n = 1.0 / d_hat.shape[-1]
    d_x = inv_std * (
        d_hat
        - d_hat.sum(axis=-1, keepdims=True) * inv_n
        - x_hat * ((d_hat * x_hat).sum(axis=-1, keepdims=True) * inv_n)
    )
    return d_x, d_gain, d_shift


class ForwardCache:
    __slots__ = ("single", "layers")

    def __init__(self, single, layers):
        self.single = single
        self.layers = layers


def mlp_forward(params: MlpParams, x):
    """Evaluate the network; returns (output, cache for :func:`mlp_backward`)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != params.layer_sizes[0]:
        raise ConfigurationError(f"input of shape {x.shape} does not match input size {params.layer_sizes[0]}")
    layers = []
    n_hidden = params.layout.n_hidden
    for k in range(n_hidden):
        z = h @ params.weights[k].T + params.biases[k]
        ln_cache = None
        if params.layer_norm:
            z, ln_cache = layer_norm_forward(z, params.layernorm_gains[k], params.layernorm_shifts[k])
        a = np.tanh(z)
        layers.append((h, ln_cache, a))
        h = a
    out = h @ params.weights[-1].T + params.biases[-1]
    if params.output_activation == "tanh":
        out = np.tanh(out)
    layers.append((h, None, out))
    return (out[0] if single else out), ForwardCache(single, layers)


def mlp_backward(params: MlpParams, cache: ForwardCache, output_grad):
    """Backpropagate ``output_grad`` (dL/d output); returns (GradientBundle, dL/d input)."""
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.single:
        g = g[None, :] if g.ndim == 1 else g
    h_last, _, out = cache.layers[-1]
    if g.shape != out.shape:
        raise ConfigurationError(f"output gradient shape {g.shape} does not match output {out.shape}")
    grads = GradientBundle(params.layout)
    if params.output_activation == "tanh":
        g = g * (1.0 - out * out)
    grads.weights[-1][:] = g.T @ h_last
    grads.biases[-1][:] = g.sum(axis=0)
    d = g @ params.weights[-1]
    for k in range(params.layout.n_hidden - 1, -1, -1):
        h_in, ln_cache, a = cache.layers[k]
        d = d * (1.0 - a * a)
        if ln_cache is not None:
            d, d_gain, d_shift = layer_norm_backward(ln_cache, d)
            grads.layernorm_gains[k][:] = d_gain
            grads.layernorm_shifts[k][:] = d_shift
        grads.weights[k][:] = d.T @ h_in
        grads.biases[k][:] = d.sum(axis=0)
        d = d @ params.weights[k]
    return grads, (d[0] if cache.single else d)


@dataclass
class AdamState:
    """Moment estimates for one flat parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        n = params.flat.shape[0]
        return cls(np.zeros(n), np.zeros(n), learning_rate, beta1, beta2, epsilon)

    def copy(self):
        return AdamState(
            self.first_moment.copy(),
            self.second_moment.copy(),
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
            self.step_count,
        )


def clip_by_norm(flat, max_norm):
    norm = np.linalg.norm(flat)
    if max_norm is not None and norm > max_norm:
        return flat * (max_norm / norm)
    return flat


def adam_step(params, grads: GradientBundle, state: AdamState, maximize=False, clip_norm=None):
    """One bias-corrected Adam update of ``params.flat`` in place.

    ``maximize`` ascends the gradient. Non-finite gradients raise
    :class:`NonFiniteGradientError` before any state is touched.
    """
    g = grads.flat
    if g.shape != params.flat.shape or state.first_moment.shape != params.flat.shape:
        raise ConfigurationError("gradient, parameters and optimizer state are not congruent")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError("refusing an Adam step on a non-finite gradient")
    g = clip_by_norm(g, clip_norm)
    if maximize:
        g = -g
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params.flat -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state
