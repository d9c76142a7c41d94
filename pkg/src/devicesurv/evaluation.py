"""Precision/recall/F1 scoring, PR curves, and document-level splits."""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputFormatError


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        """Percent in [0, 100]."""
        return 100.0 * self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def rounded(self) -> tuple[float, float, float]:
        return round(self.precision, 1), round(self.recall, 1), round(self.f1, 1)


def f1_from_pr(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (same units in, same out)."""
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _as_map(pairs, name: str) -> dict:
    """Accept a mapping or an iterable of (candidate_id, value) pairs;
    duplicate ids in pair form are an error."""
    if isinstance(pairs, dict):
        return pairs
    out: dict = {}
    for key, value in pairs:
        if key in out:
            raise InputFormatError(f"duplicate candidate_id {key!r} in {name}")
        out[key] = value
    return out


def prf1(predictions, gold, threshold: float = 0.5) -> Metrics:
    """Counts over the union of keys; a missing prediction scores as
    negative (an unextracted gold relation is a false negative)."""
    predictions = _as_map(predictions, "predictions")
    gold = _as_map(gold, "gold")
    keys = set(predictions) | set(gold)
    tp = fp = fn = 0
    for k in keys:
        pred_pos = predictions.get(k, 0.0) >= threshold if k in predictions else False
        gold_pos = bool(gold.get(k, 0))
        if pred_pos and gold_pos:
            tp += 1
        elif pred_pos and not gold_pos:
            fp += 1
        elif not pred_pos and gold_pos:
            fn += 1
    return Metrics(tp=tp, fp=fp, fn=fn)


@dataclass(frozen=True)
class PRCurve:
    recalls: tuple[float, ...]
    precisions: tuple[float, ...]
    average_precision: float


def pr_curve(scores: dict[str, float], gold: dict[str, int]) -> PRCurve:
    """Step-wise (non-interpolated) PR curve sweeping distinct scores
    descending; AP = sum over steps of (R_k - R_{k-1}) * P_k."""
    ids = sorted(gold)
    y = np.array([int(gold[i]) for i in ids])
    if y.min() == y.max():
        raise ConfigError("gold must contain both classes")
    s = np.array([float(scores.get(i, 0.0)) for i in ids])
    n_pos = int(y.sum())
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    recalls, precisions = [], []
    ap = 0.0
    prev_recall = 0.0
    tp = fp = 0
    i = 0
    n = len(ids)
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp += int(y_sorted[i:j].sum())
        fp += (j - i) - int(y_sorted[i:j].sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        recalls.append(recall)
        precisions.append(precision)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return PRCurve(tuple(recalls), tuple(precisions), float(ap))


def split_documents(doc_ids, seed: int, sizes: tuple[int, int, int]):
    """Seeded shuffle split into (train, dev, test) id sets of exact sizes."""
    doc_ids = list(doc_ids)
    n_train, n_dev, n_test = sizes
    if n_train + n_dev + n_test > len(doc_ids):
        raise ConfigError(
            f"split sizes {sizes} exceed corpus size {len(doc_ids)}"
        )
    rng = random.Random(seed)
    shuffled = sorted(doc_ids)
    rng.shuffle(shuffled)
    train = set(shuffled[:n_train])
    dev = set(shuffled[n_train : n_train + n_dev])
    test = set(shuffled[n_train + n_dev : n_train + n_dev + n_test])
    return train, dev, test


def metrics_to_csv(metrics: Metrics, path) -> None:
    p, r, f = metrics.rounded()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("precision,recall,f1,tp,fp,fn\n")
        fh.write(f"{p},{r},{f},{metrics.tp},{metrics.fp},{metrics.fn}\n")


def pr_points_to_csv(curve: PRCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("recall,precision\n")
        for r, p in zip(curve.recalls, curve.precisions):
            fh.write(f"{r:.6f},{p:.6f}\n")
        fh.write(f"# average_precision,{curve.average_precision:.6f}\n")
