"""Accuracy matrices and the continual-learning scores derived from them.

Indices are 0-based in code: ``a[k, t]`` is the accuracy (percent) on task
``k``'s test set after training through task ``t``.
"""

from __future__ import annotations

import csv
import json
import warnings

import numpy as np

from .exceptions import DataWarning, InputError
from .model import ModelParams, forward


class AccuracyMatrix:
    def __init__(self, a):
        a = np.array(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InputError(f"accuracy matrix must be square with T >= 1, got shape {a.shape}")
        # NaN marks entries not yet evaluated
        filled = a[~np.isnan(a)]
        if np.any((filled < 0) | (filled > 100)):
            raise InputError("accuracies must lie in [0, 100]")
        self.a = a

    @classmethod
    def empty(cls, T: int) -> "AccuracyMatrix":
        return cls(np.full((T, T), np.nan))

    @property
    def T(self) -> int:
        return self.a.shape[0]

    def __getitem__(self, idx):
        return self.a[idx]

    def __setitem__(self, idx, value):
        self.a[idx] = value

    def is_complete(self) -> bool:
        return not np.any(np.isnan(self.a))

    def tolist(self):
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.a]

    def __repr__(self):
        return f"AccuracyMatrix(T={self.T})"


def evaluate(params: ModelParams, X, y) -> float:
    """Percent of rows whose argmax logit (lowest index on ties) equals the label."""
    y = np.asarray(y)
    if len(y) == 0:
        raise InputError("test set is empty")
    pred = np.argmax(forward(params, X), axis=1)
    return 100.0 * np.count_nonzero(pred == y) / len(y)


def _matrix(m) -> np.ndarray:
    return m.a if isinstance(m, AccuracyMatrix) else np.asarray(m, dtype=float)


def average_accuracy(m) -> float:
    """Mean of the final column."""
    a = _matrix(m)
    return float(np.mean(a[:, -1]))


def backward_forgetting(m) -> float:
    """Mean drop from just-trained accuracy to final accuracy over all but the last task.

    Negative values mean later training improved earlier tasks. A single-task
    matrix scores 0.
    """
    a = _matrix(m)
    T = a.shape[0]
    if T < 2:
        warnings.warn("backward forgetting is undefined for a single task; reporting 0", DataWarning,
                      stacklevel=2)
        return 0.0
    k = np.arange(T - 1)
    return float(np.mean(a[k, k] - a[k, T - 1]))


def aa_curve(m) -> list[float]:
    a = _matrix(m)
    return [float(np.mean(a[: t + 1, t])) for t in range(a.shape[0])]


def metrics_report(m: AccuracyMatrix, method: str, benchmark: str, seed: int, **extra) -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        bwf = backward_forgetting(m)
    report = {
        "method": method,
        "benchmark": benchmark,
        "seed": seed,
        "AA": average_accuracy(m),
        "BWF": bwf,
        "aa_curve": aa_curve(m),
        "matrix": m.tolist(),
    }
    report.update(extra)
    return report


def write_report_json(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def write_report_csv(report: dict, path) -> None:
    """Flat form: ``method,seed,k,t,accuracy`` with 1-based task indices."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "seed", "k", "t", "accuracy"])
        for k, row in enumerate(report["matrix"], start=1):
            for t, acc in enumerate(row, start=1):
                writer.writerow([report["method"], report["seed"], k, t, repr(acc)])
