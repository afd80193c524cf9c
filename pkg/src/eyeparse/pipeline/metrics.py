"""Per-class accuracy and precision tables."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..errors import InputError

DASH = "-"


@dataclass
class MetricsTable:
    """Percentages per class; None marks a class absent from the truth."""

    classes: tuple
    accuracy: list
    precision: list

    @property
    def mean(self):
        vals = [a for a in self.accuracy if a is not None]
        return float(np.mean(vals)) if vals else None

    def row(self, name):
        i = self.classes.index(name)
        return self.accuracy[i], self.precision[i]

    def format_table(self, digits=2):
        """Aligned text: one accuracy row and one precision row plus a mean column."""
        def cell(v):
            return DASH if v is None else f"{v:.{digits}f}"

        header = ["metric"] + list(self.classes) + ["mean"]
        rows = [["accuracy"] + [cell(v) for v in self.accuracy] + [cell(self.mean)],
                ["precision"] + [cell(v) for v in self.precision] + [DASH]]
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in [header] + rows]
        return "\n".join(lines) + "\n"

    def to_csv(self, digits=2):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "accuracy", "precision"])
        for name, a, p in zip(self.classes, self.accuracy, self.precision):
            w.writerow([name, DASH if a is None else f"{a:.{digits}f}",
                        DASH if p is None else f"{p:.{digits}f}"])
        w.writerow(["mean", DASH if self.mean is None else f"{self.mean:.{digits}f}", DASH])
        return buf.getvalue()


def confusion_matrix(predicted, truth, n_labels):
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise InputError(f"{predicted.shape[0]} predictions for {truth.shape[0]} points")
    if len(truth) and (min(predicted.min(), truth.min()) < 0
                       or max(predicted.max(), truth.max()) >= n_labels):
        raise InputError(f"labels must lie in 0..{n_labels - 1}")
    cm = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(cm, (truth, predicted), 1)
    return cm


def evaluate_metrics(predicted, truth, classes):
    """Accuracy = correct / true points of the class; precision = correct / predicted.

    Labels at or past ``len(classes)`` (such as "other") count as wrong
    predictions but get no column of their own.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    n = max(len(classes), int(predicted.max(initial=0)) + 1, int(truth.max(initial=0)) + 1)
    cm = confusion_matrix(predicted, truth, n)
    acc, prec = [], []
    for c in range(len(classes)):
        true_c = cm[c].sum()
        pred_c = cm[:, c].sum()
        if true_c == 0:
            acc.append(None)
            prec.append(None)
            continue
        acc.append(100.0 * cm[c, c] / true_c)
        prec.append(100.0 * cm[c, c] / pred_c if pred_c else 0.0)
    return MetricsTable(tuple(classes), acc, prec)
