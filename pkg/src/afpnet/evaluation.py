"""Detection metrics and PCA projection of classifier inputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = field(default=())

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "percent": {
                "precision": round(100 * self.precision, 2),
                "recall": round(100 * self.recall, 2),
                "f1": round(100 * self.f1, 2),
            },
            "flags": list(self.flags),
        }


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> MetricsReport:
    """Precision, recall and F1 of the positive class.

    A zero denominator yields 0 and a flag naming the undefined metric.
    """
    preds = [int(p) for p in predictions]
    labs = [int(y) for y in labels]
    if len(preds) != len(labs):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labs)} labels")
    if not preds:
        raise ValueError("no predictions to score")
    if any(v not in (0, 1) for v in preds + labs):
        raise ValueError("predictions and labels must be 0 or 1")
    tp = sum(p == 1 and y == 1 for p, y in zip(preds, labs))
    fp = sum(p == 1 and y == 0 for p, y in zip(preds, labs))
    fn = sum(p == 0 and y == 1 for p, y in zip(preds, labs))
    tn = len(preds) - tp - fp - fn
    flags = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision_undefined")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall_undefined")
    if precision + recall:
        # same as 2PR/(P+R), but without the extra rounding of the ratios
        f1 = 2 * tp / (2 * tp + fp + fn)
    else:
        f1 = 0.0
        flags.append("f1_undefined")
    return MetricsReport(tp, fp, fn, tn, precision, recall, f1, tuple(flags))


def project_features(features, dims: int = 2) -> tuple[np.ndarray, bool]:
    """Mean-centred projection onto the top principal components.

    Components come from the sample covariance in descending eigenvalue
    order, each signed so its largest-magnitude loading is positive. Returns
    ``(coords, degenerate)``; ``degenerate`` is set, with all-zero coords,
    when the data has no variance.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two feature vectors of equal dimensionality")
    centred = X - X.mean(axis=0)
    cov = centred.T @ centred / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    if evals.size == 0 or evals[-1] <= 1e-12 * max(1.0, float(np.abs(X).max())):
        return np.zeros((X.shape[0], dims)), True
    order = np.argsort(evals, kind="stable")[::-1][:dims]
    comps = evecs[:, order]
    pivot = np.abs(comps).argmax(axis=0)
    comps = comps * np.sign(comps[pivot, np.arange(comps.shape[1])])
    coords = centred @ comps
    if coords.shape[1] < dims:
        coords = np.hstack([coords, np.zeros((X.shape[0], dims - coords.shape[1]))])
    return coords, False
