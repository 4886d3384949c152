"""Label correction by prototype voting and correction-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import NoisyDataset
from .errors import ConfigError, DataError
from .prototypes import PrototypeSet
from .similarity import normalized_rows

VOTE_AVERAGE = "average"
VOTE_MAX = "max"
VOTE_KINDS = (VOTE_AVERAGE, VOTE_MAX)


@dataclass
class CorrectedLabels:
    labels: np.ndarray        # (N,) int32
    scores: np.ndarray        # (N, K) float64 cosine vote per class
    source_epoch: int

    def validate(self) -> None:
        n, k = self.scores.shape
        if self.labels.shape != (n,):
            raise ValueError("corrected labels/scores length mismatch")
        if n and not np.array_equal(self.labels, self.scores.argmax(axis=1)):
            raise ValueError("corrected labels must be the argmax of the scores")
        if n and (self.scores.min() < -1.0 - 1e-6 or self.scores.max() > 1.0 + 1e-6):
            raise ValueError("scores out of [-1, 1]")


@dataclass
class CorrectionMetrics:
    overall: float
    per_class: np.ndarray         # (K,) accuracy of corrected labels, grouped by true class
    noisy_overall: float
    noisy_per_class: np.ndarray


def _score_matrix(features: np.ndarray, protos: PrototypeSet, vote: str) -> np.ndarray:
    if vote not in VOTE_KINDS:
        raise ConfigError(f"unknown vote kind {vote!r}")
    q = normalized_rows(features)
    vecs, class_ids = protos.stacked()
    sims = q @ normalized_rows(vecs).T
    k = protos.num_classes
    scores = np.empty((q.shape[0], k), dtype=np.float64)
    for cp in protos.classes:
        cols = sims[:, class_ids == cp.class_id]
        scores[:, cp.class_id] = cols.mean(axis=1) if vote == VOTE_AVERAGE else cols.max(axis=1)
    return scores


def class_scores(x_features: np.ndarray, protos: PrototypeSet, vote: str = VOTE_AVERAGE) -> np.ndarray:
    """Per-class vote for one query: mean (or max) cosine to each class's prototypes."""
    return _score_matrix(np.atleast_2d(np.asarray(x_features, dtype=np.float64)), protos, vote)[0]


def correct_labels(
    ds: NoisyDataset,
    extract: Callable[[np.ndarray], np.ndarray],
    protos: PrototypeSet,
    source_epoch: int = 0,
    vote: str = VOTE_AVERAGE,
) -> CorrectedLabels:
    """Assign every sample in ds the class with the highest prototype vote.

    Ties go to the lowest class index (argmax keeps the first maximum).
    """
    if protos.num_classes != ds.num_classes:
        raise DataError(
            f"prototype set covers {protos.num_classes} classes, dataset has {ds.num_classes}"
        )
    feats = np.asarray(extract(ds.features), dtype=np.float64)
    scores = _score_matrix(feats, protos, vote)
    labels = scores.argmax(axis=1).astype(np.int32)
    return CorrectedLabels(labels=labels, scores=scores, source_epoch=source_epoch)


def correction_metrics(corrected: CorrectedLabels, ds: NoisyDataset) -> CorrectionMetrics:
    """Overall + per-true-class accuracy of corrected labels, with the noisy baseline."""
    if ds.true_labels is None:
        raise DataError("correction metrics need true labels")
    true = ds.true_labels
    k = ds.num_classes
    per_class = np.zeros(k)
    noisy_per_class = np.zeros(k)
    for c in range(k):
        mask = true == c
        if mask.any():
            per_class[c] = float((corrected.labels[mask] == c).mean())
            noisy_per_class[c] = float((ds.noisy_labels[mask] == c).mean())
    overall = float((corrected.labels == true).mean()) if ds.n_samples else 0.0
    noisy_overall = float((ds.noisy_labels == true).mean()) if ds.n_samples else 0.0
    return CorrectionMetrics(
        overall=overall,
        per_class=per_class,
        noisy_overall=noisy_overall,
        noisy_per_class=noisy_per_class,
    )
