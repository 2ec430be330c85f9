"""Staged streaming protocol and open-world metrics."""

from __future__ import annotations

import csv
import json
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .cascade import Cascade
from .openmax import UNKNOWN, train_root

CSV_COLUMNS = ["stage", "en_accuracy", "f_score", "N", "N_known", "N_unknown", "TP", "FP", "FN"]


def en_accuracy(n, n_known, n_unknown):
    """(correct known + correctly rejected unknown) / total."""
    if n <= 0:
        raise ValueError("EN-Accuracy needs at least one test instance")
    return (n_known + n_unknown) / n


def f_score(tp, fp, fn):
    """``2TP / (2TP + FP + FN)`` with unknown as the positive class."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        warnings.warn("F-score undefined for all-zero counts; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return 2 * tp / denom


@dataclass
class StreamSchedule:
    initial_known: list
    arrival_order: list
    interleave_seed: int = 0

    def __post_init__(self):
        self.initial_known = [int(c) for c in self.initial_known]
        self.arrival_order = [int(c) for c in self.arrival_order]
        if len(self.initial_known) < 2:
            raise ValueError("the root needs at least two initially known classes")
        if set(self.initial_known) & set(self.arrival_order):
            raise ValueError("a class cannot be both initially known and arriving")
        if len(set(self.arrival_order)) != len(self.arrival_order):
            raise ValueError("arrival order lists a class twice")

    @classmethod
    def default(cls, dataset, seed=0, num_initial=2):
        classes = dataset.classes("train")
        return cls(classes[:num_initial], classes[num_initial:], seed)

    def check(self, dataset):
        train_classes = set(dataset.classes("train"))
        scheduled = set(self.initial_known) | set(self.arrival_order)
        missing = sorted(scheduled - train_classes)
        if missing:
            raise ValueError(f"schedule references classes with no training data: {missing}")
        unscheduled = sorted(train_classes - scheduled)
        if unscheduled:
            raise ValueError(f"training classes missing from the schedule: {unscheduled}")


@dataclass
class StageReport:
    stage: int
    en_accuracy: float
    f_score: float
    N: int
    N_known: int
    N_unknown: int
    TP: int
    FP: int
    FN: int
    learned_classes: list = field(default_factory=list)
    unknown_classes: list = field(default_factory=list)
    confusion: dict = field(default_factory=dict)
    # Detection snapshot of the training stream since the previous report.
    stream_seen: int = 0
    stream_flagged_unknown: int = 0

    @property
    def protocol_stage(self):
        # Stage numbering that starts at 1 with the root-only cascade.
        return self.stage + 1

    def csv_row(self):
        return [self.stage, repr(self.en_accuracy), repr(self.f_score),
                self.N, self.N_known, self.N_unknown, self.TP, self.FP, self.FN]

    def to_dict(self):
        d = asdict(self)
        d["protocol_stage"] = self.protocol_stage
        return d


def majority_label(labels):
    counts = Counter(l for l in labels if l is not None)
    if not counts:
        return None
    top = max(counts.values())
    return min(l for l, c in counts.items() if c == top)


def score_predictions(stage, truth, predicted, label_map):
    """Build a :class:`StageReport` from ground truth and cascade predictions.

    ``label_map`` sends cascade class ids to ground-truth labels; test
    classes outside its image count as unknown at this stage.
    """
    learned = set(label_map.values())
    n_known = n_unknown = tp = fp = fn = 0
    confusion = {}
    for gt, pred in zip(truth, predicted):
        pred = int(pred)
        pred_gt = None if pred == UNKNOWN else label_map.get(pred)
        key = "unknown" if pred == UNKNOWN else str(pred_gt)
        row = confusion.setdefault(str(gt), {})
        row[key] = row.get(key, 0) + 1
        if gt in learned:
            if pred == UNKNOWN:
                fp += 1
            elif pred_gt == gt:
                n_known += 1
        elif pred == UNKNOWN:
            n_unknown += 1
            tp += 1
        else:
            fn += 1
    n = len(truth)
    return StageReport(
        stage=stage,
        en_accuracy=en_accuracy(n, n_known, n_unknown),
        f_score=f_score(tp, fp, fn),
        N=n, N_known=n_known, N_unknown=n_unknown, TP=tp, FP=fp, FN=fn,
        learned_classes=sorted(learned),
        unknown_classes=sorted({int(g) for g in truth} - learned),
        confusion={k: dict(sorted(v.items())) for k, v in sorted(confusion.items(), key=lambda kv: int(kv[0]))},
    )


def evaluate_cascade(cascade, test_instances, label_map=None):
    if not test_instances:
        raise ValueError("no test instances to evaluate")
    label_map = label_map if label_map is not None else cascade_label_map(cascade)
    X = np.vstack([inst.features for inst in test_instances])
    predicted = cascade.recognize_batch(X)
    truth = [inst.label for inst in test_instances]
    return score_predictions(cascade.stage, truth, predicted, label_map)


def cascade_label_map(cascade):
    stored = cascade.metadata.get("label_map")
    if stored is not None:
        return {int(k): v for k, v in stored.items()}
    return {c: c for c in cascade.known_classes}


def run_protocol(dataset, schedule, config, observer=None):
    """Train the root on the initial classes, then stream arriving classes.

    The full test split is scored on the root-only cascade and again after
    every leaf is added, for as long as some test class is still unknown.
    ``observer(event, cascade, payload)`` is called with ``"init"``,
    ``"transition"`` and ``"report"`` events.
    """
    schedule.check(dataset)
    test = dataset.test
    if not test:
        raise ValueError("dataset has no test instances")
    test_classes = {inst.label for inst in test}

    initial = set(schedule.initial_known)
    root_train = [inst for inst in dataset.train if inst.label in initial]
    root = train_root(dataset.matrix(root_train), [i.label for i in root_train], config)
    cascade = Cascade.initialize(root, root_train, config)
    label_map = {c: c for c in root.class_labels}
    cascade.metadata["label_map"] = {str(k): v for k, v in label_map.items()}
    _notify(observer, "init", cascade, None)

    reports = []
    seen = flagged = 0

    def report():
        nonlocal seen, flagged
        rep = evaluate_cascade(cascade, test, label_map)
        rep.stream_seen, rep.stream_flagged_unknown = seen, flagged
        seen = flagged = 0
        reports.append(rep)
        _notify(observer, "report", cascade, rep)

    if test_classes - set(label_map.values()):
        report()
    rng = np.random.default_rng(schedule.interleave_seed)
    by_class = {}
    for inst in dataset.train:
        by_class.setdefault(inst.label, []).append(inst)
    for cls in schedule.arrival_order:
        stream = by_class[cls]
        for j in rng.permutation(len(stream)):
            pred, transition = cascade.ingest(stream[j])
            seen += 1
            flagged += pred == UNKNOWN
            if transition is None:
                continue
            label_map[transition.class_label] = majority_label(transition.buffer_labels)
            cascade.metadata["label_map"] = {str(k): v for k, v in label_map.items()}
            _notify(observer, "transition", cascade, transition)
            if test_classes - set(label_map.values()):
                report()
    return reports


def _notify(observer, event, cascade, payload):
    if observer is not None:
        observer(event, cascade, payload)


def write_reports(reports, out_dir, config=None, extra=None):
    """Write ``stages.csv`` and ``reports.json`` into ``out_dir``."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "stages.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rep in reports:
            writer.writerow(rep.csv_row())
    bundle = {
        "config": config.to_dict() if config is not None else None,
        "reports": [rep.to_dict() for rep in reports],
    }
    if extra:
        bundle.update(extra)
    with open(out / "reports.json", "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, indent=2)
        fh.write("\n")
    return out / "stages.csv", out / "reports.json"
