"""Small dense feed-forward networks trained with hand-written backprop.

Everything is float64 numpy. A :class:`Network` is a stack of dense layers;
the final layer produces logits and the activation that feeds it is exposed
as the *penultimate* vector, which the open-world nodes use as their feature
space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, StateError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ShapeError(f"layer dimensions must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def stack(in_dim, hidden, out_dim, activation="relu"):
    """Layer specs for ``in_dim -> hidden... -> out_dim`` with an identity head."""
    dims = [in_dim, *hidden, out_dim]
    specs = [LayerSpec(a, b, activation) for a, b in zip(dims[:-2], dims[1:-1])]
    specs.append(LayerSpec(dims[-2], dims[-1], "identity"))
    return specs


class Network:
    """Dense network with Glorot-uniform initialisation.

    ``params`` is a flat list ``[W0, b0, W1, b1, ...]`` so optimizers can
    treat it as an opaque sequence of arrays.
    """

    def __init__(self, layers, rng_seed=0, params=None):
        layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in layers]
        if not layers:
            raise ShapeError("network needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        self.layers = layers
        self.rng_seed = int(rng_seed)
        if params is None:
            params = self._init_params()
        self.params = [np.array(p, dtype=np.float64) for p in params]
        self._check_params()
        self._trace = None

    def _init_params(self):
        rng = np.random.default_rng(self.rng_seed)
        params = []
        for spec in self.layers:
            limit = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            params.append(rng.uniform(-limit, limit, size=(spec.in_dim, spec.out_dim)))
            params.append(np.zeros(spec.out_dim))
        return params

    def _check_params(self):
        if len(self.params) != 2 * len(self.layers):
            raise ShapeError(f"expected {2 * len(self.layers)} parameter arrays, got {len(self.params)}")
        for i, spec in enumerate(self.layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            if w.shape != (spec.in_dim, spec.out_dim) or b.shape != (spec.out_dim,):
                raise ShapeError(
                    f"layer {i}: parameters {w.shape}/{b.shape} do not match "
                    f"{spec.in_dim}x{spec.out_dim}"
                )

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def feature_dim(self):
        return self.layers[-1].in_dim

    @property
    def num_params(self):
        return sum(p.size for p in self.params)

    def _run(self, batch, keep):
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"batch shape {x.shape} does not match input dim {self.in_dim}")
        inputs, pre = [], []
        a = x
        for i, spec in enumerate(self.layers):
            z = a @ self.params[2 * i] + self.params[2 * i + 1]
            if keep:
                inputs.append(a)
                pre.append(z)
            penultimate = a
            a = np.maximum(z, 0.0) if spec.activation == "relu" else z
        return a, penultimate, (inputs, pre)

    def forward(self, batch):
        """Return ``(logits, penultimate)`` without touching any state."""
        logits, penultimate, _ = self._run(batch, keep=False)
        return logits, penultimate

    def forward_train(self, batch):
        """Like :meth:`forward` but records the activations for :meth:`backward`."""
        logits, penultimate, trace = self._run(batch, keep=True)
        self._trace = trace
        return logits, penultimate

    def backward(self, upstream_grad, feature_grad=None):
        """Gradients of the loss w.r.t. ``params``.

        ``upstream_grad`` is dL/dlogits. ``feature_grad``, if given, is an
        extra dL/dpenultimate term injected below the head layer; the head
        itself receives no gradient from it.
        """
        if self._trace is None:
            raise StateError("backward called without a recorded forward pass")
        inputs, pre = self._trace
        n = inputs[0].shape[0]
        delta = np.asarray(upstream_grad, dtype=np.float64)
        if delta.shape != (n, self.out_dim):
            raise ShapeError(f"upstream gradient shape {delta.shape}, expected {(n, self.out_dim)}")
        if feature_grad is not None:
            feature_grad = np.asarray(feature_grad, dtype=np.float64)
            if feature_grad.shape != (n, self.feature_dim):
                raise ShapeError(
                    f"feature gradient shape {feature_grad.shape}, expected {(n, self.feature_dim)}"
                )
        grads = [None] * len(self.params)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            if self.layers[i].activation == "relu":
                delta = delta * (pre[i] > 0)
            grads[2 * i] = inputs[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.params[2 * i].T
                if i == last and feature_grad is not None:
                    delta = delta + feature_grad
        return grads

    def copy(self):
        return Network(self.layers, self.rng_seed, [p.copy() for p in self.params])

    def to_dict(self):
        return {
            "layers": [
                {"in_dim": s.in_dim, "out_dim": s.out_dim, "activation": s.activation}
                for s in self.layers
            ],
            "rng_seed": self.rng_seed,
            "params": [p.tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["layers"], d["rng_seed"], d["params"])


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    if np.isnan(z).any():
        raise ValueError("softmax input contains NaN")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    n, k = z.shape
    if y.shape != (n,):
        raise ShapeError(f"{y.shape[0]} labels for a batch of {n}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integer class indices")
    if (y < 0).any() or (y >= k).any():
        raise ValueError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    loss = float(-log_softmax(z)[rows, y].mean())
    grad = softmax(z)
    grad[rows, y] -= 1.0
    return loss, grad / n


class SGD:
    kind = "sgd"

    def __init__(self, learning_rate):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params, grads):
        _check_grads(params, grads)
        for p, g in zip(params, grads):
            p -= self.learning_rate * g
        self.step_count += 1


class Adam:
    """Adam with bias-corrected moments; updates ``params`` in place."""

    kind = "adam"

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.step_count = 0

    def step(self, params, grads):
        _check_grads(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind, learning_rate):
    if kind == "sgd":
        return SGD(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


def _check_grads(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")


def relative_error(analytic, numeric):
    """Elementwise ``|a - n| / max(1e-8, |a| + |n|)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def numerical_gradients(network, batch, labels, epsilon=1e-5):
    """Central-difference gradients of the cross-entropy loss."""
    grads = []
    for p in network.params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = cross_entropy(network.forward(batch)[0], labels)[0]
            flat[j] = orig - epsilon
            down = cross_entropy(network.forward(batch)[0], labels)[0]
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * epsilon)
        grads.append(g)
    return grads


def analytic_gradients(network, batch, labels):
    logits, _ = network.forward_train(batch)
    _, upstream = cross_entropy(logits, labels)
    return network.backward(upstream)


def gradient_check(network, batch, labels, epsilon=1e-5):
    """Max relative error between backprop and central differences."""
    analytic = analytic_gradients(network, batch, labels)
    numeric = numerical_gradients(network, batch, labels, epsilon)
    return max(float(relative_error(a, n).max()) for a, n in zip(analytic, numeric))
