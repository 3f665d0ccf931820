"""Evaluation metrics and the small-sample statistics used for model
comparison.

Everything is plain numpy and exact where feasible: the Wilcoxon signed-rank
test enumerates the permutation distribution for n <= 20 (subset-sum counting
over doubled ranks, so tied average ranks stay integral) and only falls back
to the tie-corrected normal approximation above that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DataError

_EXACT_WILCOXON_MAX_N = 20


def confusion_matrix(y_true, y_pred, n_classes: Optional[int] = None) -> np.ndarray:
    """Counts with true labels on rows, predictions on columns."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size == 0:
        raise DataError("labels must be equal-length non-empty 1-d arrays")
    k = int(n_classes) if n_classes is not None else int(max(y_true.max(), y_pred.max())) + 1
    if y_true.min() < 0 or y_pred.min() < 0 or y_true.max() >= k or y_pred.max() >= k:
        raise DataError("labels out of range")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def precision_recall_f1(cm: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class arrays; classes with an empty denominator score 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom,
                   out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def macro_f1(y_true, y_pred, n_classes: Optional[int] = None) -> float:
    _, _, f1 = precision_recall_f1(confusion_matrix(y_true, y_pred, n_classes))
    return float(f1.mean())


def row_normalize(cm: np.ndarray) -> np.ndarray:
    """Confusion matrix rows as proportions; empty rows stay zero."""
    cm = np.asarray(cm, dtype=np.float64)
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, sums, out=np.zeros_like(cm), where=sums > 0)


def mcc(y_true, y_pred, n_classes: Optional[int] = None) -> float:
    """Multiclass Matthews correlation (covariance form); 0 when undefined."""
    cm = confusion_matrix(y_true, y_pred, n_classes).astype(np.float64)
    t = cm.sum(axis=1)   # true counts
    p = cm.sum(axis=0)   # predicted counts
    c = float(np.trace(cm))
    s = float(cm.sum())
    num = c * s - float(t @ p)
    den = math.sqrt(s * s - float(p @ p)) * math.sqrt(s * s - float(t @ t))
    if den == 0.0:
        return 0.0
    return num / den


def roc_curve(y_true, scores) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary ROC points; tied scores enter a point together.

    Returns (fpr, tpr, thresholds) with a leading (0, 0) point; thresholds
    are the distinct scores in descending order.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.shape != scores.shape or y_true.ndim != 1 or y_true.size == 0:
        raise DataError("labels and scores must be equal-length 1-d arrays")
    if not np.isin(y_true, (0, 1)).all():
        raise DataError("roc_curve expects binary 0/1 labels")
    n_pos = int(y_true.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_curve needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    yt = y_true[order]
    tps = np.cumsum(yt)
    fps = np.cumsum(1 - yt)
    last_of_group = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    tpr = np.concatenate(([0.0], tps[last_of_group] / n_pos))
    fpr = np.concatenate(([0.0], fps[last_of_group] / n_neg))
    return fpr, tpr, s[last_of_group]


def binary_auc(y_true, scores) -> float:
    fpr, tpr, _ = roc_curve(y_true, scores)
    return float(np.trapezoid(tpr, fpr))


def auc_ovr(y_true, probs) -> np.ndarray:
    """One-vs-rest AUC per class; nan where a class has no positives or
    no negatives."""
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != y_true.shape[0]:
        raise DataError("probs must be (n, n_classes) matching labels")
    k = probs.shape[1]
    out = np.full(k, np.nan)
    for c in range(k):
        pos = (y_true == c).astype(np.int64)
        if 0 < pos.sum() < pos.size:
            out[c] = binary_auc(pos, probs[:, c])
    return out


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(x, y=None) -> Tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped.  Returns (W, p) with W = min(W+, W-).
    Exact permutation p for n <= 20, tie-corrected normal approximation
    with continuity correction above.
    """
    x = np.asarray(x, dtype=np.float64)
    if y is not None:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != x.shape:
            raise DataError("paired samples must have equal length")
        d = x - y
    else:
        d = x
    if d.ndim != 1 or d.size == 0:
        raise DataError("need a non-empty 1-d sample")
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return 0.0, 1.0
    ranks = _average_ranks(np.abs(d))
    w_pos = float(ranks[d > 0].sum())
    w_neg = float(ranks[d < 0].sum())
    w = min(w_pos, w_neg)

    if n <= _EXACT_WILCOXON_MAX_N:
        # subset-sum counting on doubled ranks (integral even with ties)
        r2 = np.rint(2.0 * ranks).astype(np.int64)
        total = int(r2.sum())
        ways = np.zeros(total + 1, dtype=np.float64)
        ways[0] = 1.0
        for r in r2:
            ways[r:] += ways[:total + 1 - r]
        w2 = int(round(2.0 * w))
        p = 2.0 * ways[:w2 + 1].sum() / (2.0 ** n)
        return w, min(1.0, p)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(ranks, return_counts=True)
    var -= float((counts ** 3 - counts).sum()) / 48.0
    if var <= 0.0:
        return w, 1.0
    dev = w - mean
    dev -= math.copysign(min(0.5, abs(dev)), dev)
    p = 2.0 * _norm_sf(abs(dev) / math.sqrt(var))
    return w, min(1.0, p)


def holm_bonferroni(pvals) -> np.ndarray:
    """Step-down Holm adjustment; preserves input order."""
    p = np.asarray(pvals, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DataError("need a non-empty 1-d p-value array")
    if (p < 0).any() or (p > 1).any():
        raise DataError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adj = np.empty(m)
    running = 0.0
    for i, idx in enumerate(order):
        running = max(running, (m - i) * p[idx])
        adj[idx] = min(1.0, running)
    return adj


@dataclass
class MetricsReport:
    n: int
    accuracy: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    mcc: float
    auc: Optional[np.ndarray] = None
    class_names: Optional[Tuple[str, ...]] = None

    @property
    def macro_auc(self) -> Optional[float]:
        if self.auc is None:
            return None
        valid = self.auc[~np.isnan(self.auc)]
        return float(valid.mean()) if valid.size else None

    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "confusion_normalized": row_normalize(self.confusion).tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "macro_f1": self.macro_f1,
            "mcc": self.mcc,
            "auc": None if self.auc is None else [
                None if math.isnan(v) else v for v in self.auc
            ],
            "macro_auc": self.macro_auc,
        }
        if self.class_names is not None:
            d["classes"] = list(self.class_names)
        return d


def compute_report(
    y_true,
    y_pred,
    probs=None,
    n_classes: Optional[int] = None,
    class_names: Optional[Sequence[str]] = None,
) -> MetricsReport:
    if class_names is not None and n_classes is None:
        n_classes = len(class_names)
    cm = confusion_matrix(y_true, y_pred, n_classes)
    precision, recall, f1 = precision_recall_f1(cm)
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    return MetricsReport(
        n=int(y_true.size),
        accuracy=float((y_true == y_pred).mean()),
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        mcc=mcc(y_true, y_pred, cm.shape[0]),
        auc=None if probs is None else auc_ovr(y_true, probs),
        class_names=None if class_names is None else tuple(class_names),
    )
