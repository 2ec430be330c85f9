"""Root node: a multi-class network with an OpenMax unknown detector.

The activation vector used for both the OpenMax revision and the MAV
distances is the network's final pre-softmax output (its logits).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import FitError, StateError, TrainingError
from .evt import WeibullModel, fit_weibull_tail, weibull_cdf

UNKNOWN = 0


@dataclass
class RootModel:
    network: nn.Network
    class_labels: list
    alpha: int
    gamma: float
    rejection_rule: str = "unknown_prob"
    mavs: np.ndarray | None = None
    weibulls: list | None = None
    train_accuracy: float | None = None
    loss_history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.class_labels = [int(c) for c in self.class_labels]
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError("duplicate class labels")
        if any(c == UNKNOWN for c in self.class_labels):
            raise ValueError(f"class label {UNKNOWN} is reserved for unknown")
        if self.network.out_dim != len(self.class_labels):
            raise ValueError("network output size must equal the number of classes")
        if not 1 <= self.alpha <= len(self.class_labels):
            raise ValueError(f"alpha must lie in [1, {len(self.class_labels)}], got {self.alpha}")

    @property
    def num_classes(self):
        return len(self.class_labels)

    @property
    def calibrated(self):
        return self.mavs is not None and self.weibulls is not None

    def to_dict(self):
        if not self.calibrated:
            raise StateError("only calibrated root models can be serialized")
        return {
            "network": self.network.to_dict(),
            "class_labels": list(self.class_labels),
            "alpha": self.alpha,
            "gamma": self.gamma,
            "rejection_rule": self.rejection_rule,
            "mavs": self.mavs.tolist(),
            "weibulls": [w.to_dict() for w in self.weibulls],
            "train_accuracy": self.train_accuracy,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            network=nn.Network.from_dict(d["network"]),
            class_labels=d["class_labels"],
            alpha=int(d["alpha"]),
            gamma=float(d["gamma"]),
            rejection_rule=d["rejection_rule"],
            mavs=np.array(d["mavs"], dtype=np.float64),
            weibulls=[WeibullModel.from_dict(w) for w in d["weibulls"]],
            train_accuracy=d["train_accuracy"],
        )


def train_root(X, y, config):
    """Train and calibrate the root classifier on labelled instances.

    ``y`` holds class ids (positive integers); the output units follow the
    sorted order of the distinct ids.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y) or len(X) == 0:
        raise TrainingError("root training needs a non-empty (n, d) matrix with one label per row")
    labels = sorted(int(c) for c in np.unique(y))
    if len(labels) < 2:
        raise TrainingError(f"root training needs at least 2 classes, got {labels}")
    index = {c: i for i, c in enumerate(labels)}
    targets = np.array([index[int(c)] for c in y])

    network = nn.Network(nn.stack(X.shape[1], config.root_hidden, len(labels)), rng_seed=config.seed)
    rng = np.random.default_rng([config.seed, 0])
    optimizer = nn.make_optimizer(config.optimizer, config.lr_root)
    history = fit_classifier(network, X, targets, config.root_iterations, config.batch_size, optimizer, rng)

    model = RootModel(
        network=network,
        class_labels=labels,
        alpha=min(config.alpha_root, len(labels)),
        gamma=config.gamma_root,
        rejection_rule=config.rejection_rule,
        loss_history=history,
    )
    logits, _ = network.forward(X)
    model.train_accuracy = float(np.mean(logits.argmax(axis=1) == targets))
    model.mavs = compute_mavs(network, X, targets, len(labels))
    model.weibulls = calibrate(network, model.mavs, X, targets, config.eta_tail, labels)
    return model


def fit_classifier(network, X, targets, iterations, batch_size, optimizer, rng):
    """Minibatch cross-entropy training; returns the per-step loss."""
    n = len(X)
    history = []
    for _ in range(iterations):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        logits, _ = network.forward_train(X[idx])
        loss, grad = nn.cross_entropy(logits, targets[idx])
        optimizer.step(network.params, network.backward(grad))
        history.append(loss)
    return history


def activations(network, X):
    return network.forward(X)[0]


def _correct_mask(network, X, targets):
    av = activations(network, X)
    return av, av.argmax(axis=1) == targets


def compute_mavs(network, X, targets, num_classes):
    """Mean activation vector per class over correctly classified rows."""
    av, correct = _correct_mask(network, np.asarray(X, dtype=np.float64), np.asarray(targets))
    mavs = np.empty((num_classes, av.shape[1]))
    for k in range(num_classes):
        rows = av[correct & (targets == k)]
        if len(rows) == 0:
            raise FitError(f"class index {k} has no correctly classified training instances")
        mavs[k] = rows.mean(axis=0)
    return mavs


def calibrate(network, mavs, X, targets, tail_size, class_labels=None):
    """Per-class Weibull fits on distances of correct rows to their MAV."""
    av, correct = _correct_mask(network, np.asarray(X, dtype=np.float64), np.asarray(targets))
    models = []
    for k, mav in enumerate(mavs):
        name = class_labels[k] if class_labels is not None else k
        rows = av[correct & (targets == k)]
        if len(rows) < tail_size:
            raise FitError(
                f"class {name} has {len(rows)} correctly classified instances, "
                f"fewer than the tail size {tail_size}"
            )
        distances = np.linalg.norm(rows - mav, axis=1)
        try:
            models.append(fit_weibull_tail(distances, tail_size))
        except FitError as exc:
            raise FitError(f"class {name}: {exc}") from exc
    return models


def rank_weights(activation, alpha):
    """``(alpha - i + 1) / alpha`` for the top-``alpha`` ranks, 0 elsewhere."""
    v = np.atleast_2d(activation)
    order = np.argsort(-v, axis=1, kind="stable")
    weights = np.zeros_like(v)
    rows = np.arange(v.shape[0])[:, None]
    weights[rows, order[:, :alpha]] = (alpha - np.arange(alpha)) / alpha
    return weights


def revise_activations(activation, cdf, alpha):
    """OpenMax revision of activations given per-class Weibull CDF scores.

    Returns ``(revised, pseudo)`` where ``pseudo`` is the activation mass
    moved to the unknown slot.
    """
    v = np.atleast_2d(np.asarray(activation, dtype=np.float64))
    c = np.atleast_2d(np.asarray(cdf, dtype=np.float64))
    revised = v * (1.0 - rank_weights(v, alpha) * c)
    pseudo = (v - revised).sum(axis=1)
    return revised, pseudo


def class_cdfs(model, av):
    if not model.calibrated:
        raise StateError("root model is not calibrated")
    distances = np.linalg.norm(av[:, None, :] - model.mavs[None, :, :], axis=2)
    return np.column_stack([weibull_cdf(w, distances[:, k]) for k, w in enumerate(model.weibulls)])


def openmax_from_activations(model, av):
    av = np.atleast_2d(av)
    revised, pseudo = revise_activations(av, class_cdfs(model, av), model.alpha)
    return nn.softmax(np.column_stack([pseudo, revised]))


def openmax_scores(model, x):
    """Probabilities over ``[unknown, *class_labels]`` for one row or a batch."""
    x = np.asarray(x, dtype=np.float64)
    probs = openmax_from_activations(model, activations(model.network, np.atleast_2d(x)))
    return probs[0] if x.ndim == 1 else probs


def root_decide_batch(model, X):
    """Predicted class id per row, or ``UNKNOWN`` where the root rejects."""
    if not model.calibrated:
        raise StateError("root model is not calibrated")
    av = activations(model.network, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    probs = openmax_from_activations(model, av)
    if model.rejection_rule == "argmax":
        reject = probs.argmax(axis=1) == 0
    else:
        reject = probs[:, 0] >= model.gamma
    labels = np.asarray(model.class_labels)[av.argmax(axis=1)]
    return np.where(reject, UNKNOWN, labels)


def root_decide(model, x):
    return int(root_decide_batch(model, x)[0])
