"""Classification (accuracy, macro P/R/F1) and ranking (MAP, NDCG@k, HR@k) metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    total: int

    @classmethod
    def from_predictions(cls, predictions: Sequence[int], labels: Sequence[int], n_classes: int):
        pred = np.asarray(predictions, dtype=int)
        true = np.asarray(labels, dtype=int)
        tp = np.bincount(true[pred == true], minlength=n_classes)
        fp = np.bincount(pred[pred != true], minlength=n_classes)
        fn = np.bincount(true[pred != true], minlength=n_classes)
        return cls(tp, fp, fn, len(true))


class ClassificationReport(NamedTuple):
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


def classification_metrics(predictions: Sequence[int], labels: Sequence[int], n_classes: int) -> ClassificationReport:
    """Accuracy and unweighted class means of precision, recall and F1.

    Empty ratios (0/0) count as 0, including for classes that never occur.
    """
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    if not len(labels):
        raise ValueError("classification_metrics needs at least one sample")
    c = ConfusionCounts.from_predictions(predictions, labels, n_classes)
    precision = _ratio(c.tp.astype(float), (c.tp + c.fp).astype(float))
    recall = _ratio(c.tp.astype(float), (c.tp + c.fn).astype(float))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return ClassificationReport(float(c.tp.sum() / c.total), float(precision.mean()),
                                float(recall.mean()), float(f1.mean()))


@dataclass
class RankingJudgment:
    ranked: list
    relevant: set

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError("ranked ids must be unique")
        self.relevant = set(self.relevant)


def average_precision(j: RankingJudgment) -> float:
    """Mean of precision@rank over relevant items; unretrieved relevant items contribute 0."""
    if not j.relevant:
        return 0.0
    hits, acc = 0, 0.0
    for rank, item in enumerate(j.ranked, start=1):
        if item in j.relevant:
            hits += 1
            acc += hits / rank
    return acc / len(j.relevant)


def mean_average_precision(js: Sequence[RankingJudgment]) -> float:
    return float(np.mean([average_precision(j) for j in js])) if js else 0.0


def _dcg(gains: Sequence[int]) -> float:
    return sum(g / math.log2(i + 1) for i, g in enumerate(gains, start=1))


def ndcg_at_k(j: RankingJudgment, k: int) -> float:
    """Binary-relevance NDCG@k with log2 discount."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ideal = _dcg([1] * min(len(j.relevant), k))
    if ideal == 0:
        return 0.0
    return _dcg([int(item in j.relevant) for item in j.ranked[:k]]) / ideal


def mean_ndcg_at_k(js: Sequence[RankingJudgment], k: int) -> float:
    return float(np.mean([ndcg_at_k(j, k) for j in js])) if js else 0.0


def hit_ratio_at_k(js: Sequence[RankingJudgment], k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    if not js:
        return 0.0
    return sum(any(item in j.relevant for item in j.ranked[:k]) for j in js) / len(js)
