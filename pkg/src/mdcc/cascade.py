"""The classifier cascade: root + ordered leaves, buffers, reference set."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import Dataset
from .errors import ModelFormatError, ShapeError, StateError
from .leaf import LeafModel, leaf_decide_batch, train_leaf
from .openmax import UNKNOWN, RootModel, root_decide_batch

log = logging.getLogger(__name__)

FORMAT_NAME = "mdcc-cascade"
FORMAT_VERSION = 1


class ReferenceSet:
    """Fixed-capacity store of instance ids per class.

    Features live in the owning cascade's instance pool; only ids are kept
    here so the set serializes compactly.
    """

    def __init__(self, capacity, seed=0, per_class=None):
        if capacity <= 0:
            raise ValueError("reference set capacity must be positive")
        self.capacity = int(capacity)
        self.seed = int(seed)
        self.per_class = {int(k): list(v) for k, v in (per_class or {}).items()}

    @property
    def classes(self):
        return list(self.per_class)

    @property
    def total(self):
        return sum(len(v) for v in self.per_class.values())

    def quota(self, num_classes=None):
        return self.capacity // (num_classes or len(self.per_class))

    def rebalance(self, new_class, new_ids):
        """New set with ``new_class`` added and every class cut to the quota."""
        new_class = int(new_class)
        if new_class in self.per_class:
            raise ValueError(f"class {new_class} is already in the reference set")
        merged = {**self.per_class, new_class: list(new_ids)}
        return ReferenceSet(self.capacity, self.seed, self._downsample(merged))

    def _downsample(self, groups):
        q = self.capacity // len(groups)
        rng = np.random.default_rng([self.seed, len(groups)])
        out = {}
        for cls, ids in groups.items():
            if len(ids) > q:
                keep = np.sort(rng.choice(len(ids), size=q, replace=False))
                ids = [ids[i] for i in keep]
            out[cls] = list(ids)
        return out

    @classmethod
    def initial(cls, capacity, seed, groups):
        ref = cls(capacity, seed)
        ref.per_class = ref._downsample({int(k): list(v) for k, v in groups.items()})
        return ref

    def to_dict(self):
        return {
            "capacity": self.capacity,
            "seed": self.seed,
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["capacity"], d["seed"], {int(k): v for k, v in d["per_class"].items()})


@dataclass
class Buffer:
    group_id: str
    capacity: int
    ids: list = field(default_factory=list)

    @property
    def full(self):
        return len(self.ids) >= self.capacity


@dataclass
class Transition:
    stage: int
    class_label: int
    group_id: str
    buffer_ids: list
    buffer_labels: list
    leaf: LeafModel


class Cascade:
    """Root model plus leaves in creation order.

    ``recognize`` is pure; ``ingest`` is the single writer and either
    completes a stage transition or leaves the cascade as it was.
    """

    def __init__(self, root, config, reference_set, pool=None, leaves=None, buffers=None,
                 stage=None, metadata=None):
        self.root = root
        self.config = config
        self.reference_set = reference_set
        self.pool = dict(pool or {})
        self.leaves = list(leaves or [])
        self.buffers = dict(buffers or {})
        self.stage = len(self.leaves) if stage is None else int(stage)
        self.metadata = dict(metadata or {})
        if self.stage != len(self.leaves):
            raise StateError(f"stage {self.stage} does not match {len(self.leaves)} leaves")

    @classmethod
    def initialize(cls, root, train_instances, config):
        """Stage-0 cascade whose reference set is drawn from the root's training data."""
        groups = {c: [] for c in root.class_labels}
        for inst in train_instances:
            if inst.label in groups:
                groups[inst.label].append(inst.id)
        ref = ReferenceSet.initial(config.reference_size, config.seed, groups)
        pool = {inst.id: inst for inst in train_instances}
        cascade = cls(root, config, ref, pool)
        cascade._prune_pool()
        return cascade

    @property
    def known_classes(self):
        return list(self.root.class_labels) + [leaf.class_label for leaf in self.leaves]

    @property
    def feature_dim(self):
        return self.root.network.in_dim

    def _matrix(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.feature_dim:
            raise ShapeError(f"instances have {X.shape[1]} features, the cascade expects {self.feature_dim}")
        return X

    def recognize_batch(self, X):
        """Predicted class id per row (``UNKNOWN`` = 0 when every node rejects)."""
        X = self._matrix(X)
        pred = root_decide_batch(self.root, X)
        for leaf in self.leaves:
            pending = np.flatnonzero(pred == UNKNOWN)
            if pending.size == 0:
                break
            pred[pending] = leaf_decide_batch(leaf, X[pending])
        return pred

    def recognize(self, x):
        features = x.features if hasattr(x, "features") else x
        return int(self.recognize_batch(np.asarray(features).reshape(1, -1))[0])

    def ingest(self, instance):
        """Recognize ``instance`` and buffer it if unknown.

        Returns ``(prediction, transition)``; ``transition`` is set when the
        instance filled its buffer and a new leaf was appended.
        """
        pred = self.recognize(instance)
        if pred != UNKNOWN:
            return pred, None
        if not instance.group_id:
            raise ValueError(f"instance {instance.id!r} carries no group_id")
        buf = self.buffers.get(instance.group_id)
        if buf is None:
            buf = self.buffers[instance.group_id] = Buffer(instance.group_id, self.config.buffer_size)
        buf.ids.append(instance.id)
        self.pool[instance.id] = instance
        if not buf.full:
            return pred, None
        return pred, self._spawn_leaf(buf)

    def _instances(self, ids):
        try:
            return [self.pool[i] for i in ids]
        except KeyError as exc:
            raise StateError(f"features for instance {exc.args[0]!r} are not loaded") from None

    def reference_arrays(self):
        X, y = [], []
        for cls, ids in self.reference_set.per_class.items():
            for inst in self._instances(ids):
                X.append(inst.features)
                y.append(cls)
        return np.vstack(X), np.asarray(y)

    def _spawn_leaf(self, buf):
        new_stage = self.stage + 1
        new_label = max(self.known_classes) + 1
        members = self._instances(buf.ids)
        ref_X, ref_y = self.reference_arrays()
        leaf = train_leaf(
            np.vstack([m.features for m in members]), ref_X, ref_y, new_label, self.config,
            seed=self.config.seed * 10007 + new_stage,
        )
        new_ref = self.reference_set.rebalance(new_label, buf.ids)
        # Commit: nothing above touched self, so a failure leaves stage t intact.
        transition = Transition(
            stage=new_stage,
            class_label=new_label,
            group_id=buf.group_id,
            buffer_ids=list(buf.ids),
            buffer_labels=[m.label for m in members],
            leaf=leaf,
        )
        self.leaves.append(leaf)
        self.reference_set = new_ref
        self.stage = new_stage
        del self.buffers[buf.group_id]
        self._prune_pool()
        log.info("stage %d: leaf for group %s learned as class %d", new_stage, buf.group_id, new_label)
        return transition

    def _prune_pool(self):
        live = set()
        for ids in self.reference_set.per_class.values():
            live.update(ids)
        for buf in self.buffers.values():
            live.update(buf.ids)
        self.pool = {k: v for k, v in self.pool.items() if k in live}

    def node_bytes(self):
        """Serialized bytes of each node, root first; used to verify immutability."""
        nodes = [self.root.to_dict()] + [leaf.to_dict() for leaf in self.leaves]
        return [json.dumps(n).encode("utf-8") for n in nodes]

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "stage": self.stage,
            "known_classes": self.known_classes,
            "config": self.config.to_dict(),
            "root": self.root.to_dict(),
            "leaves": [leaf.to_dict() for leaf in self.leaves],
            "reference_set": self.reference_set.to_dict(),
            "buffers": {
                g: {"capacity": b.capacity, "ids": list(b.ids)} for g, b in self.buffers.items()
            },
            "metadata": self.metadata,
        }

    def dumps(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d, instances=None):
        if not isinstance(d, dict) or d.get("format") != FORMAT_NAME:
            raise ModelFormatError("not an mdcc cascade file")
        if d.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported cascade format version {d.get('version')!r}")
        try:
            config = RunConfig.from_dict(d["config"])
            root = RootModel.from_dict(d["root"])
            leaves = [LeafModel.from_dict(x) for x in d["leaves"]]
            ref = ReferenceSet.from_dict(d["reference_set"])
            buffers = {
                g: Buffer(g, int(b["capacity"]), list(b["ids"])) for g, b in d["buffers"].items()
            }
            cascade = cls(root, config, ref, leaves=leaves, buffers=buffers,
                          stage=d["stage"], metadata=d.get("metadata"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"corrupt cascade file: {exc!r}") from exc
        if cascade.known_classes != [int(c) for c in d["known_classes"]]:
            raise ModelFormatError("known class list does not match the stored nodes")
        if instances is not None:
            lookup = instances if isinstance(instances, (Mapping, Dataset)) \
                else {inst.id: inst for inst in instances}
            wanted = set()
            for ids in ref.per_class.values():
                wanted.update(ids)
            for b in buffers.values():
                wanted.update(b.ids)
            cascade.pool = {}
            for i in sorted(wanted):
                try:
                    cascade.pool[i] = lookup[i]
                except KeyError:
                    raise ModelFormatError(f"instance {i!r} referenced by the model is not in the dataset") from None
        return cascade


def save_cascade(cascade, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cascade.dumps())


def load_cascade(path, instances=None):
    """Load a cascade; pass the dataset to restore reference/buffer features."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return Cascade.from_dict(data, instances)


def recognize(cascade, x):
    return cascade.recognize(x)


def ingest(cascade, x):
    return cascade.ingest(x)


__all__ = [
    "Buffer", "Cascade", "ReferenceSet", "Transition",
    "ingest", "load_cascade", "recognize", "save_cascade",
]
