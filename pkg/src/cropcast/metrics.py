"""Classification evaluation: confusion matrix, precision/recall/F1, and
step-wise average precision, with macro averages over the four classes.

Zero-division convention: precision, recall, or F1 with an empty denominator
is 0, and a class absent from both truth and prediction still participates in
the macro mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import CLASS_VALUES

N_CLASSES = len(CLASS_VALUES)


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """4x4 counts; rows are true class, columns predicted."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have equal length")
    bad = ~np.isin(y_true, CLASS_VALUES) | ~np.isin(y_pred, CLASS_VALUES)
    if bad.any():
        raise ValueError("labels outside {0,1,2,3}")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


@dataclass(slots=True)
class MetricsReport:
    """Per-class and macro scores in Table form."""

    confusion_matrix: np.ndarray
    accuracy: float
    precision: np.ndarray   # (4,)
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray     # (4,) int
    ap: np.ndarray | None = field(default=None)  # set when scores are known

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    @property
    def macro_ap(self) -> float | None:
        return None if self.ap is None else float(self.ap.mean())

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "confusion_matrix": self.confusion_matrix.tolist(),
            "per_class": {
                str(c): {
                    "precision": float(self.precision[c]),
                    "recall": float(self.recall[c]),
                    "f1": float(self.f1[c]),
                    "support": int(self.support[c]),
                    **({"ap": float(self.ap[c])} if self.ap is not None else {}),
                }
                for c in CLASS_VALUES
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
                **({"ap": self.macro_ap} if self.ap is not None else {}),
            },
        }
        return out

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")

    def to_text(self) -> str:
        """Aligned per-class table plus macro row."""
        has_ap = self.ap is not None
        headers = ["class", "precision", "recall", "f1-score"]
        if has_ap:
            headers.append("avg-precision")
        headers.append("support")
        rows = []
        for c in CLASS_VALUES:
            row = [str(c), f"{self.precision[c]:.4f}", f"{self.recall[c]:.4f}",
                   f"{self.f1[c]:.4f}"]
            if has_ap:
                row.append(f"{self.ap[c]:.4f}")
            row.append(str(int(self.support[c])))
            rows.append(row)
        macro = ["macro avg", f"{self.macro_precision:.4f}",
                 f"{self.macro_recall:.4f}", f"{self.macro_f1:.4f}"]
        if has_ap:
            macro.append(f"{self.macro_ap:.4f}")
        macro.append(str(int(self.support.sum())))
        rows.append(macro)
        rows.append(["accuracy", "", "", f"{self.accuracy:.4f}",
                     *([""] if has_ap else []), str(int(self.support.sum()))])
        widths = [max(len(headers[k]), *(len(r[k]) for r in rows))
                  for k in range(len(headers))]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        lines = [fmt.format(*headers)]
        lines += [fmt.format(*r) for r in rows]
        return "\n".join(lines)


def scores(cm: np.ndarray) -> MetricsReport:
    """Precision/recall/F1 per class and accuracy from a confusion matrix."""
    cm = np.asarray(cm, dtype=np.int64)
    if cm.shape != (N_CLASSES, N_CLASSES) or (cm < 0).any():
        raise ValueError("confusion matrix must be 4x4 nonnegative counts")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    pred_pos = cm.sum(axis=0)
    precision = np.array([_safe_div(tp[c], pred_pos[c]) for c in CLASS_VALUES])
    recall = np.array([_safe_div(tp[c], support[c]) for c in CLASS_VALUES])
    f1 = np.array([_safe_div(2 * precision[c] * recall[c],
                             precision[c] + recall[c]) for c in CLASS_VALUES])
    total = cm.sum()
    accuracy = _safe_div(tp.sum(), total)
    return MetricsReport(cm, accuracy, precision, recall, f1, support)


def average_precision(y_true_onehot: np.ndarray,
                      scores_c: np.ndarray) -> float:
    """Step-wise AP: sum of (recall step) x (precision there), thresholds at
    each distinct score descending, tied scores grouped into one step."""
    y = np.asarray(y_true_onehot, dtype=np.float64)
    s = np.asarray(scores_c, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("labels and scores must align")
    n_pos = y.sum()
    if n_pos == 0:
        return 0.0
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    # group ties: cut where the score changes
    boundary = np.nonzero(np.diff(s_sorted))[0]
    ends = np.concatenate([boundary + 1, [len(s_sorted)]])
    tp_cum = np.cumsum(y_sorted)
    ap = 0.0
    prev_recall = 0.0
    for end in ends:
        tp = tp_cum[end - 1]
        precision = tp / end
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def evaluate(y_true: np.ndarray, proba: np.ndarray) -> MetricsReport:
    """Full report from class-probability outputs (N, 4): argmax labels for
    the confusion-based scores, per-class probabilities for AP."""
    proba = np.asarray(proba, dtype=np.float64)
    if proba.ndim != 2 or proba.shape[1] != N_CLASSES:
        raise ValueError("proba must be (N, 4)")
    y_pred = proba.argmax(axis=1)
    report = scores(confusion(y_true, y_pred))
    report.ap = np.array([
        average_precision((np.asarray(y_true) == c).astype(float), proba[:, c])
        for c in CLASS_VALUES
    ])
    return report


def macro_f1_from_labels(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Convenience for training-time validation scoring."""
    return scores(confusion(y_true, y_pred)).macro_f1
