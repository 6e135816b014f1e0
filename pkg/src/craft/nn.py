"""Small dense-network kernel with hand-written backward passes.

Layers hold their parameters as float64 numpy arrays and cache whatever the
backward pass needs during ``forward``.  A :class:`Sequential` stack chains
them; :class:`Adam` updates parameters in place.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NonFiniteError, StateError

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5


def _as_batch(x, width, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{what} must be 2-D (batch, features), got shape {x.shape}")
    if x.shape[1] != width:
        raise DimensionError(f"{what} has {x.shape[1]} features, expected {width}")
    return x


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def dense_forward(layer, x):
    """y = x @ W.T + b for every row of ``x``."""
    x = _as_batch(x, layer.weight.shape[1])
    return x @ layer.weight.T + layer.bias


def leaky_relu(x, alpha=0.2):
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, x, alpha * x)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def batchnorm_forward(layer, x, training=True, update_stats=True):
    """Normalize ``x`` per channel and apply the affine ``gamma``/``beta``.

    In training mode the batch mean and biased variance are used and, when
    ``update_stats`` is set, folded into the running estimates.  Inference mode
    reads the running estimates only.
    """
    x = _as_batch(x, layer.gamma.shape[0])
    if training:
        if x.shape[0] < 2:
            raise DimensionError("batch norm in training mode needs a batch of at least 2")
        mean = x.mean(axis=0)
        var = ((x - mean) ** 2).mean(axis=0)
        if update_stats:
            m = layer.momentum
            layer.running_mean = m * layer.running_mean + (1.0 - m) * mean
            layer.running_var = m * layer.running_var + (1.0 - m) * var
    else:
        mean, var = layer.running_mean, layer.running_var
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    xhat = (x - mean) * inv_std
    return layer.gamma * xhat + layer.beta, xhat, inv_std


class Layer:
    """Base class: subclasses fill ``params`` and ``grads`` with matching keys."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        if rng is None:
            weight = np.zeros((out_features, in_features))
        else:
            weight = glorot_uniform(rng, in_features, out_features)
        self.params = {"weight": weight, "bias": np.zeros(out_features)}

    @property
    def weight(self):
        return self.params["weight"]

    @property
    def bias(self):
        return self.params["bias"]

    def predict(self, x):
        return dense_forward(self, x)

    def forward(self, x, training=True, update_stats=True):
        y = dense_forward(self, x)
        self._cache = np.asarray(x, dtype=np.float64)
        return y

    def backward(self, grad):
        x = self._take_cache()
        self.grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.weight


class BatchNorm(Layer):
    def __init__(self, num_features, momentum=BN_MOMENTUM, epsilon=BN_EPSILON):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.momentum = momentum
        self.epsilon = epsilon
        self.params = {"gamma": np.ones(num_features), "beta": np.zeros(num_features)}
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    @property
    def gamma(self):
        return self.params["gamma"]

    @property
    def beta(self):
        return self.params["beta"]

    def predict(self, x):
        return batchnorm_forward(self, x, training=False)[0]

    def forward(self, x, training=True, update_stats=True):
        y, xhat, inv_std = batchnorm_forward(self, x, training, update_stats)
        self._cache = (xhat, inv_std, training)
        return y

    def backward(self, grad):
        xhat, inv_std, training = self._take_cache()
        self.grads = {"gamma": (grad * xhat).sum(axis=0), "beta": grad.sum(axis=0)}
        dxhat = grad * self.gamma
        if not training:
            return dxhat * inv_std
        n = grad.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class LeakyReLU(Layer):
    def __init__(self, alpha=0.2):
        super().__init__()
        if not 0.0 <= alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
        self.alpha = alpha

    def predict(self, x):
        return leaky_relu(x, self.alpha)

    def forward(self, x, training=True, update_stats=True):
        x = np.asarray(x, dtype=np.float64)
        self._cache = x >= 0.0
        return leaky_relu(x, self.alpha)

    def backward(self, grad):
        positive = self._take_cache()
        return np.where(positive, grad, self.alpha * grad)


class Sigmoid(Layer):
    def predict(self, x):
        return sigmoid(x)

    def forward(self, x, training=True, update_stats=True):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, grad):
        y = self._take_cache()
        return grad * y * (1.0 - y)


class Sequential:
    """An ordered stack of layers sharing one forward/backward sweep."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=True, update_stats=True):
        for layer in self.layers:
            x = layer.forward(x, training=training, update_stats=update_stats)
        return x

    def predict(self, x):
        """Inference-mode pass that records nothing; safe on a frozen stack from many threads."""
        for layer in self.layers:
            x = layer.predict(x)
        return x

    def backward(self, grad):
        grad = np.asarray(grad, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        """(name, array) pairs in a fixed order; arrays are the live buffers."""
        return [
            (f"{i}.{key}", arr)
            for i, layer in enumerate(self.layers)
            for key, arr in layer.params.items()
        ]

    def gradients(self):
        return {
            f"{i}.{key}": g
            for i, layer in enumerate(self.layers)
            for key, g in layer.grads.items()
        }

    def batchnorms(self):
        return [(i, layer) for i, layer in enumerate(self.layers) if isinstance(layer, BatchNorm)]


class Adam:
    """Bias-corrected Adam; moments are keyed by parameter name."""

    def __init__(self, learning_rate=2e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.step_count = 0

    def step(self, params, grads):
        """Update every ``(name, array)`` in ``params`` in place from ``grads[name]``."""
        for name, p in params:
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in params:
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
