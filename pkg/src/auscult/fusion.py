"""Audio/tabular probability fusion and challenge-style metrics.

Fusion is the convex combination alpha * p_audio + (1 - alpha) * p_tabular,
applied elementwise with no renormalization (a convex combination of
simplices is already a simplex). Metrics follow the sensitivity/specificity
family: SE over the pooled adventitious classes, SP on the normal class,
their arithmetic and harmonic means, and the mean of those two as the final
score.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ProbabilityVector:
    probs: np.ndarray
    label_map: tuple

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "label_map", tuple(self.label_map))
        if probs.ndim != 1 or len(probs) != len(self.label_map):
            raise InvalidInputError("probs and label_map lengths differ")
        if probs.min() < 0 or abs(probs.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidInputError("probs must be a simplex")


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class correct/total tallies plus the index of the normal class."""

    correct: np.ndarray
    totals: np.ndarray
    normal_class: int

    def __post_init__(self):
        correct = np.asarray(self.correct, dtype=np.int64)
        totals = np.asarray(self.totals, dtype=np.int64)
        object.__setattr__(self, "correct", correct)
        object.__setattr__(self, "totals", totals)
        if correct.shape != totals.shape or correct.ndim != 1:
            raise InvalidInputError("correct/totals misaligned")
        if not 0 <= self.normal_class < len(totals):
            raise InvalidInputError("normal_class out of range")
        if (correct < 0).any() or (correct > totals).any():
            raise InvalidInputError("need 0 <= correct <= total per class")

    @property
    def adventitious_correct(self) -> int:
        mask = np.arange(len(self.correct)) != self.normal_class
        return int(self.correct[mask].sum())

    @property
    def adventitious_total(self) -> int:
        mask = np.arange(len(self.totals)) != self.normal_class
        return int(self.totals[mask].sum())

    @property
    def normal_correct(self) -> int:
        return int(self.correct[self.normal_class])

    @property
    def normal_total(self) -> int:
        return int(self.totals[self.normal_class])


@dataclass(frozen=True)
class TaskMetrics:
    se: float
    sp: float
    as_score: float
    hs: float
    final_score: float

    def __post_init__(self):
        for name in ("se", "sp", "as_score", "hs", "final_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} outside [0, 1]")
        if self.hs > self.as_score + 1e-12:
            raise InvalidInputError("harmonic mean exceeds arithmetic mean")


def fuse_probabilities(p_rene: ProbabilityVector, p_gbdt: ProbabilityVector,
                       alpha: float) -> ProbabilityVector:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    if p_rene.label_map != p_gbdt.label_map:
        raise InvalidInputError("label maps differ")
    fused = alpha * p_rene.probs + (1.0 - alpha) * p_gbdt.probs
    return ProbabilityVector(probs=fused, label_map=p_rene.label_map)


def predict_class(probs) -> int:
    """Argmax; ties resolve to the lower class index."""
    return int(np.argmax(np.asarray(probs)))


def confusion_counts(predictions, truths, normal_class: int) -> ConfusionCounts:
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise InvalidInputError("predictions and truths misaligned")
    if predictions.size == 0:
        raise InvalidInputError("empty input")
    n_classes = int(max(predictions.max(), truths.max(), normal_class)) + 1
    correct = np.zeros(n_classes, dtype=np.int64)
    totals = np.zeros(n_classes, dtype=np.int64)
    for pred, truth in zip(predictions, truths):
        totals[truth] += 1
        if pred == truth:
            correct[truth] += 1
    return ConfusionCounts(correct=correct, totals=totals,
                           normal_class=normal_class)


def compute_metrics(counts: ConfusionCounts) -> TaskMetrics:
    n_adv = counts.adventitious_total
    n_norm = counts.normal_total
    if n_adv == 0 or n_norm == 0:
        raise InvalidInputError("metrics need adventitious and normal samples")
    se = counts.adventitious_correct / n_adv
    sp = counts.normal_correct / n_norm
    as_score = (se + sp) / 2.0
    hs = 0.0 if se + sp == 0.0 else 2.0 * se * sp / (se + sp)
    final = (as_score + hs) / 2.0
    return TaskMetrics(se=se, sp=sp, as_score=as_score, hs=hs,
                       final_score=final)


def alpha_sweep(p_rene_set, p_gbdt_set, truths, normal_class: int):
    """Metrics at alpha = 0.0, 0.1, ..., 1.0; eleven (alpha, TaskMetrics) rows."""
    if not (len(p_rene_set) == len(p_gbdt_set) == len(truths)):
        raise InvalidInputError("sample sets misaligned")
    rows = []
    for step in range(11):
        alpha = step / 10.0
        preds = [
            predict_class(fuse_probabilities(pr, pg, alpha).probs)
            for pr, pg in zip(p_rene_set, p_gbdt_set)
        ]
        metrics = compute_metrics(confusion_counts(preds, truths, normal_class))
        rows.append((alpha, metrics))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "se", "sp", "as", "hs", "score"])
        for alpha, m in rows:
            writer.writerow([
                f"{alpha:.1f}",
                f"{m.se:.6f}",
                f"{m.sp:.6f}",
                f"{m.as_score:.6f}",
                f"{m.hs:.6f}",
                f"{m.final_score:.6f}",
            ])


def aggregate_patient_probs(vectors, mode: str = "mean") -> ProbabilityVector:
    """Combine per-recording vectors into one patient-level vector.

    mean: arithmetic mean (still a simplex). max: per-class max renormalized
    to sum 1.
    """
    if not vectors:
        raise InvalidInputError("no vectors to aggregate")
    label_map = vectors[0].label_map
    if any(v.label_map != label_map for v in vectors):
        raise InvalidInputError("label maps differ across recordings")
    stacked = np.stack([v.probs for v in vectors])
    if mode == "mean":
        probs = stacked.mean(axis=0)
    elif mode == "max":
        probs = stacked.max(axis=0)
        probs = probs / probs.sum()
    else:
        raise InvalidInputError(f"unknown aggregation mode {mode!r}")
    return ProbabilityVector(probs=probs, label_map=label_map)
