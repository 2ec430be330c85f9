"""One-class leaf nodes.

A leaf owns a feature network trained on the reference set (cross-entropy
over the reference classes) and regularised so that the buffered instances
of its new class land close together in feature space. Acceptance is a
distance test against the buffer's feature centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ShapeError, TrainingError
from .openmax import UNKNOWN

# Zero feature vectors have no direction; they are placed at the far end of
# the cosine range so a leaf never accepts them.
ZERO_VECTOR_COSINE = 2.0


@dataclass
class LeafModel:
    network: nn.Network
    class_label: int
    center: np.ndarray
    rejection_line: float
    theta: float
    beta: float
    distance_kind: str = "cosine"
    loss_history: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.center.shape != (self.network.feature_dim,):
            raise ShapeError(
                f"centre has shape {self.center.shape}, features have length {self.network.feature_dim}"
            )
        if not self.rejection_line >= 0:
            raise ValueError("rejection line must be non-negative")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")

    def features(self, X):
        return self.network.forward(np.atleast_2d(np.asarray(X, dtype=np.float64)))[1]

    def to_dict(self):
        return {
            "network": self.network.to_dict(),
            "class_label": self.class_label,
            "center": self.center.tolist(),
            "rejection_line": self.rejection_line,
            "theta": self.theta,
            "beta": self.beta,
            "distance_kind": self.distance_kind,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            network=nn.Network.from_dict(d["network"]),
            class_label=int(d["class_label"]),
            center=d["center"],
            rejection_line=float(d["rejection_line"]),
            theta=float(d["theta"]),
            beta=float(d["beta"]),
            distance_kind=d["distance_kind"],
        )


def self_describing_penalty(features):
    """Mean squared deviation of feature vectors from their mean vector."""
    h = _as_feature_matrix(features)
    return float(np.mean((h - h.mean(axis=0)) ** 2))


def self_describing_grad(features):
    """Gradient of :func:`self_describing_penalty` w.r.t. each feature vector.

    The mean's own dependence on the inputs cancels because deviations sum
    to zero.
    """
    h = _as_feature_matrix(features)
    return 2.0 * (h - h.mean(axis=0)) / h.size


def _as_feature_matrix(features):
    if isinstance(features, np.ndarray):
        h = features.astype(np.float64, copy=False)
    else:
        rows = [np.asarray(f, dtype=np.float64).ravel() for f in features]
        if not rows:
            raise ValueError("need at least one feature vector")
        if len({len(r) for r in rows}) != 1:
            raise ShapeError("feature vectors differ in length")
        h = np.vstack(rows)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("need at least one feature vector")
    return h


def cosine_distance(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine distance is undefined for a zero vector")
    return float(np.clip(1.0 - (u @ v) / (nu * nv), 0.0, 2.0))


def distances_to_center(H, center, kind):
    H = np.atleast_2d(H)
    if kind == "euclidean":
        return np.linalg.norm(H - center, axis=1)
    if kind != "cosine":
        raise ValueError(f"unknown distance {kind!r}")
    norms = np.linalg.norm(H, axis=1)
    cnorm = np.linalg.norm(center)
    if cnorm == 0:
        raise ValueError("cosine distance is undefined for a zero centre")
    out = np.full(len(H), ZERO_VECTOR_COSINE)
    ok = norms > 0
    out[ok] = np.clip(1.0 - (H[ok] @ center) / (norms[ok] * cnorm), 0.0, 2.0)
    return out


def outlier_count(n, theta):
    # A hair of slack keeps products like 0.3 * 10 from rounding up to 4.
    return min(n, math.ceil(theta * n - 1e-9))


def compute_rejection_line(distances, theta):
    """Largest distance left after dropping the ``ceil(theta * n)`` largest."""
    d = np.sort(np.asarray(distances, dtype=np.float64).ravel(), kind="stable")
    if d.size == 0:
        raise ValueError("need at least one distance")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    keep = d.size - outlier_count(d.size, theta)
    if keep <= 0:
        return float(d[0])
    return float(d[keep - 1])


def compute_center(leaf_or_network, X):
    network = getattr(leaf_or_network, "network", leaf_or_network)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0 or X.size == 0:
        raise ValueError("cannot compute a centre from an empty buffer")
    return network.forward(X)[1].mean(axis=0)


def train_leaf(buffer_X, ref_X, ref_y, class_label, config, seed=0):
    """Train a leaf for the class collected in ``buffer_X``.

    The two loss terms take alternating optimizer steps: a cross-entropy
    step on a reference-set minibatch, then a ``beta``-scaled
    self-describing step on a buffer minibatch.
    """
    buffer_X = np.asarray(buffer_X, dtype=np.float64)
    ref_X = np.asarray(ref_X, dtype=np.float64)
    ref_y = np.asarray(ref_y)
    if buffer_X.ndim != 2 or len(buffer_X) < 2:
        raise TrainingError("leaf training needs at least 2 buffered instances")
    if ref_X.ndim != 2 or len(ref_X) == 0 or len(ref_X) != len(ref_y):
        raise TrainingError("leaf training needs a non-empty reference set")
    if ref_X.shape[1] != buffer_X.shape[1]:
        raise ShapeError("buffer and reference set have different feature lengths")
    ref_classes = sorted(int(c) for c in np.unique(ref_y))
    if len(ref_classes) < 2:
        raise TrainingError("the reference set must hold at least 2 classes")
    index = {c: i for i, c in enumerate(ref_classes)}
    targets = np.array([index[int(c)] for c in ref_y])

    network = nn.Network(
        nn.stack(ref_X.shape[1], config.leaf_hidden, len(ref_classes)), rng_seed=seed
    )
    rng = np.random.default_rng([seed, 1])
    # One optimizer serves both alternating steps so that beta keeps its
    # meaning as a trade-off; per-term Adam moments would normalise it away.
    optimizer = nn.make_optimizer(config.optimizer, config.lr_leaf)
    beta = config.beta
    batch = config.batch_size
    outer_hist, self_hist, total_hist = [], [], []
    zeros = np.zeros((min(batch, len(buffer_X)), network.out_dim))

    for _ in range(config.leaf_iterations):
        idx = rng.choice(len(ref_X), size=min(batch, len(ref_X)), replace=False)
        logits, _ = network.forward_train(ref_X[idx])
        outer, grad = nn.cross_entropy(logits, targets[idx])
        optimizer.step(network.params, network.backward(grad))

        bidx = rng.choice(len(buffer_X), size=min(batch, len(buffer_X)), replace=False)
        if beta > 0:
            _, h = network.forward_train(buffer_X[bidx])
            penalty = self_describing_penalty(h)
            grads = network.backward(zeros, feature_grad=beta * self_describing_grad(h))
            optimizer.step(network.params, grads)
        else:
            penalty = self_describing_penalty(network.forward(buffer_X[bidx])[1])
        outer_hist.append(outer)
        self_hist.append(penalty)
        total_hist.append(outer + beta * penalty)

    if not all(np.isfinite(total_hist)):
        raise TrainingError("leaf training diverged")
    center = compute_center(network, buffer_X)
    if config.distance_kind == "cosine" and not np.linalg.norm(center) > 0:
        raise TrainingError("buffer features collapsed to the zero vector")
    distances = distances_to_center(network.forward(buffer_X)[1], center, config.distance_kind)
    return LeafModel(
        network=network,
        class_label=int(class_label),
        center=center,
        rejection_line=compute_rejection_line(distances, config.theta),
        theta=config.theta,
        beta=beta,
        distance_kind=config.distance_kind,
        loss_history={"outer": outer_hist, "self": self_hist, "total": total_hist},
    )


def leaf_decide_batch(leaf, X):
    d = distances_to_center(leaf.features(X), leaf.center, leaf.distance_kind)
    return np.where(d < leaf.rejection_line, leaf.class_label, UNKNOWN)


def leaf_decide(leaf, x):
    return int(leaf_decide_batch(leaf, x)[0])
