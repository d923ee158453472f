"""Per-class accuracy, mean aggregation, CSV metrics and plot-series text."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .dataio import NUM_CLASSES
from .errors import DataError, TestSetMismatchError


@dataclass
class PerClassAccuracy:
    """class id -> accuracy percent, plus the test count behind each value."""
    accuracy: dict
    counts: dict

    def __post_init__(self):
        if set(self.accuracy) != set(self.counts):
            raise DataError("accuracy and count tables cover different classes")
        for c, n in self.counts.items():
            if n <= 0:
                raise DataError(f"class {c} has non-positive test count {n}")

    @property
    def classes(self):
        return sorted(self.accuracy)

    def vector(self):
        return [self.accuracy[c] for c in self.classes]


def per_class_accuracy(predictions, labels):
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if predictions.shape != labels.shape:
        raise DataError(f"{len(predictions)} predictions for {len(labels)} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise DataError("labels must lie in 0..9")
    counts = np.bincount(labels, minlength=NUM_CLASSES)
    correct = np.bincount(labels[predictions == labels], minlength=NUM_CLASSES)
    present = [c for c in range(NUM_CLASSES) if counts[c]]
    return PerClassAccuracy({c: 100.0 * correct[c] / counts[c] for c in present},
                            {c: int(counts[c]) for c in present})


def aggregate_report(per_class):
    """Unweighted mean over all ten classes; every class must be present."""
    missing = [c for c in range(NUM_CLASSES) if c not in per_class.accuracy]
    if missing:
        raise DataError(f"cannot average: class(es) {missing} missing from the test set")
    return float(np.mean([per_class.accuracy[c] for c in range(NUM_CLASSES)]))


@dataclass
class RunReport:
    label: str
    per_class: PerClassAccuracy
    seed: int = 0
    config_hash: str = ""
    dataset_sizes: dict = field(default_factory=dict)
    test_hash: str = ""

    @property
    def mean(self):
        return aggregate_report(self.per_class)


def emit_csv(report):
    pc = report.per_class
    lines = ["class_id,accuracy_percent,count"]
    lines += [f"{c},{pc.accuracy[c]:.2f},{pc.counts[c]}" for c in pc.classes]
    lines.append(f"mean,{report.mean:.2f},{sum(pc.counts.values())}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_csv(data):
    """Read back :func:`emit_csv` output as ``(PerClassAccuracy, mean)``."""
    rows = data.decode("utf-8").strip("\n").split("\n")
    if not rows or rows[0] != "class_id,accuracy_percent,count":
        raise DataError("metrics CSV has an unexpected header")
    acc, counts, mean = {}, {}, None
    for row in rows[1:]:
        key, value, count = row.split(",")
        if key == "mean":
            mean = float(value)
        else:
            acc[int(key)] = float(value)
            counts[int(key)] = int(count)
    if mean is None:
        raise DataError("metrics CSV lacks the mean row")
    return PerClassAccuracy(acc, counts), mean


def _coord(v):
    return f"{v:.2f}".rstrip("0").rstrip(".")


@dataclass
class ComparisonTable:
    """Runs that were all evaluated on one test split."""
    rows: list = field(default_factory=list)

    def add(self, report):
        if self.rows and report.test_hash != self.rows[0].test_hash:
            raise TestSetMismatchError(
                f"run {report.label!r} used test set {report.test_hash[:12]}, "
                f"but {self.rows[0].label!r} used {self.rows[0].test_hash[:12]}")
        self.rows.append(report)
        return self

    def summary_csv(self):
        lines = ["label,mean_accuracy_percent,seed,config_hash"]
        lines += [f"{r.label},{r.mean:.2f},{r.seed},{r.config_hash}" for r in self.rows]
        return ("\n".join(lines) + "\n").encode("utf-8")


def emit_plot_series(comparison):
    """One line per run: ``label (0,73.1)(1,77.5)...`` in class order."""
    rows = comparison.rows if isinstance(comparison, ComparisonTable) else list(comparison)
    if not rows:
        raise DataError("nothing to plot: the comparison is empty")
    lines = []
    for r in rows:
        pc = r.per_class
        pairs = "".join(f"({c},{_coord(pc.accuracy[c])})" for c in pc.classes)
        lines.append(f"{r.label} {pairs}")
    return "\n".join(lines) + "\n"


_PAIR = re.compile(r"\((\d+),(-?\d+(?:\.\d+)?)\)")


def parse_plot_series(text):
    """Inverse of :func:`emit_plot_series`: label -> {class: accuracy}."""
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        label, coords = line.rsplit(" ", 1)
        out[label] = {int(c): float(v) for c, v in _PAIR.findall(coords)}
    return out
