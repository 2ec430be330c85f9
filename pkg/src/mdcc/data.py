"""Instances, datasets, file formats and synthetic open-world data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

SPLITS = ("train", "test")
FIXED_COLUMNS = ["id", "split", "group_id", "label"]


@dataclass(eq=False)
class Instance:
    id: str
    features: np.ndarray
    label: int | None = None
    group_id: str | None = None
    split: str = "train"

    def __post_init__(self):
        self.id = str(self.id)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.label is not None:
            self.label = int(self.label)


class Dataset:
    def __init__(self, instances):
        self.instances = list(instances)
        if not self.instances:
            raise DataFormatError("dataset is empty")
        dims = {inst.features.shape for inst in self.instances}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise DataFormatError(f"instances have inconsistent feature shapes {sorted(dims)}")
        self.feature_dim = next(iter(dims))[0]
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise DataFormatError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)
            if inst.split not in SPLITS:
                raise DataFormatError(f"instance {inst.id!r} has unknown split {inst.split!r}")
            if inst.split == "train" and not inst.group_id:
                raise DataFormatError(f"train instance {inst.id!r} has no group_id")
        self._by_id = {inst.id: inst for inst in self.instances}

    def __len__(self):
        return len(self.instances)

    def __getitem__(self, instance_id):
        return self._by_id[instance_id]

    def split(self, name):
        return [inst for inst in self.instances if inst.split == name]

    @property
    def train(self):
        return self.split("train")

    @property
    def test(self):
        return self.split("test")

    def classes(self, split=None):
        insts = self.instances if split is None else self.split(split)
        return sorted({inst.label for inst in insts if inst.label is not None})

    def matrix(self, instances=None):
        insts = self.instances if instances is None else instances
        return np.vstack([inst.features for inst in insts])

    def save(self, path, format=None):
        format = format or _format_from_path(path)
        if format == "csv":
            _save_csv(self, path)
        elif format == "jsonl":
            _save_jsonl(self, path)
        else:
            raise DataFormatError(f"unknown dataset format {format!r}")


def load_dataset(path, format=None):
    format = format or _format_from_path(path)
    if format == "csv":
        return _load_csv(path)
    if format == "jsonl":
        return _load_jsonl(path)
    raise DataFormatError(f"unknown dataset format {format!r}")


def _format_from_path(path):
    return "jsonl" if str(path).endswith((".jsonl", ".ndjson")) else "csv"


def _save_csv(dataset, path):
    header = FIXED_COLUMNS + [f"f_{i}" for i in range(dataset.feature_dim)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for inst in dataset.instances:
            writer.writerow(
                [inst.id, inst.split, inst.group_id or "", "" if inst.label is None else inst.label]
                + [repr(float(v)) for v in inst.features]
            )


def _load_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != FIXED_COLUMNS:
        raise DataFormatError(f"{path}: line 1: header must start with {','.join(FIXED_COLUMNS)}")
    header = rows[0]
    dim = len(header) - 4
    if dim <= 0 or header[4:] != [f"f_{i}" for i in range(dim)]:
        raise DataFormatError(f"{path}: line 1: feature columns must be f_0..f_{{D-1}}")
    instances = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            feats = [float(v) for v in row[4:]]
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: non-numeric feature value") from None
        if not all(math.isfinite(v) for v in feats):
            raise DataFormatError(f"{path}: line {lineno}: non-finite feature value")
        label = _parse_label(row[3], path, lineno)
        instances.append(Instance(row[0], feats, label, row[2] or None, row[1]))
    return _build(instances, path)


def _save_jsonl(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in dataset.instances:
            rec = {
                "id": inst.id,
                "split": inst.split,
                "group_id": inst.group_id,
                "label": inst.label,
                "features": inst.features.tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def _load_jsonl(path):
    instances = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                feats = [float(v) for v in rec["features"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if dim is None:
                dim = len(feats)
            elif len(feats) != dim:
                raise DataFormatError(f"{path}: line {lineno}: expected {dim} features, got {len(feats)}")
            label = rec.get("label")
            instances.append(
                Instance(rec.get("id", lineno), feats, label, rec.get("group_id"), rec.get("split", "train"))
            )
    return _build(instances, path)


def _parse_label(raw, path, lineno):
    if raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise DataFormatError(f"{path}: line {lineno}: label {raw!r} is not an integer") from None


def _build(instances, path):
    try:
        return Dataset(instances)
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def synth_generate(num_classes, dim, separation, per_class_train, per_class_test, seed=0,
                   max_retries=10000):
    """Unit-variance Gaussian clusters with centres at least ``separation`` apart.

    Classes are labelled ``1..num_classes``; train instances carry
    ``group_id = str(label)``.
    """
    if not separation > 0:
        raise ValueError("separation must be positive")
    if num_classes < 1 or dim < 1:
        raise ValueError("need at least one class and one dimension")
    rng = np.random.default_rng(seed)
    # Box wide enough that random draws usually clear the separation.
    half_width = max(0.75 * separation / math.sqrt(dim / 6.0),
                     0.75 * separation * num_classes ** (1.0 / dim))
    centers = []
    tries = 0
    while len(centers) < num_classes:
        if tries >= max_retries:
            raise RuntimeError(
                f"could not place {num_classes} centres {separation} apart in {dim}-D "
                f"after {max_retries} draws"
            )
        tries += 1
        c = rng.uniform(-half_width, half_width, size=dim)
        if all(np.linalg.norm(c - o) >= separation for o in centers):
            centers.append(c)

    instances = []
    for k, center in enumerate(centers, start=1):
        for split, count in (("train", per_class_train), ("test", per_class_test)):
            points = center + rng.standard_normal((count, dim))
            for j, p in enumerate(points):
                instances.append(
                    Instance(f"c{k}-{split}-{j}", p, k, str(k) if split == "train" else None, split)
                )
    return Dataset(instances)
