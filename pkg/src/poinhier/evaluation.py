"""Detection scores, equal error rate and the score CSV."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from poinhier.errors import InvalidInput
from poinhier.io import atomic_write
from poinhier.model import ModelParams, classifier_logit, forward_embed


@dataclass(frozen=True)
class ScoreRecord:
    sample_index: int
    score: float  # P(spoof)
    label: int


def spoof_probability(X, params: ModelParams) -> np.ndarray:
    logit = classifier_logit(forward_embed(X, params), params)
    return np.exp(-np.logaddexp(0.0, -logit))


def score_dataset(params: ModelParams, ds) -> list:
    """Score the original features of ``ds``; augmented views are ignored."""
    scores = spoof_probability(ds.features, params)
    return [ScoreRecord(i, float(s), int(l)) for i, (s, l) in enumerate(zip(scores, ds.labels))]


def operating_points(scores, labels):
    """False-alarm and miss rates for every distinct decision threshold.

    Spoof (label 1) is the positive class and a sample is flagged as spoof
    when ``score >= threshold``.  Thresholds are the sorted distinct scores
    followed by ``+inf``; the false-alarm rate falls from 1 to 0 and the miss
    rate rises from 0 to 1 along the returned arrays.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_spoof = int(np.sum(labels == 1))
    n_bona = int(np.sum(labels == 0))
    if n_spoof == 0 or n_bona == 0:
        raise InvalidInput("EER needs both bonafide and spoof samples")
    thresholds = np.append(np.unique(scores), np.inf)
    order = np.sort(scores[labels == 0])
    spoof_sorted = np.sort(scores[labels == 1])
    # count of bonafide scores >= t, and spoof scores < t
    far = (n_bona - np.searchsorted(order, thresholds, side="left")) / n_bona
    frr = np.searchsorted(spoof_sorted, thresholds, side="left") / n_spoof
    return thresholds, far, frr


def compute_eer(records) -> tuple:
    """Return ``(eer, threshold)`` with linear interpolation at the crossing."""
    records = list(records)
    scores = [r.score for r in records]
    labels = [r.label for r in records]
    return eer_from_arrays(scores, labels)


def eer_from_arrays(scores, labels) -> tuple:
    thresholds, far, frr = operating_points(scores, labels)
    diff = far - frr
    idx = int(np.argmax(diff <= 0))  # diff is 1 at the start and -1 at +inf
    if diff[idx] == 0:
        return float(far[idx]), float(thresholds[idx])
    d0, d1 = diff[idx - 1], diff[idx]
    alpha = d0 / (d0 - d1)
    eer = far[idx - 1] + alpha * (far[idx] - far[idx - 1])
    t0, t1 = thresholds[idx - 1], thresholds[idx]
    threshold = t0 if not np.isfinite(t1) else t0 + alpha * (t1 - t0)
    return float(eer), float(threshold)


def scores_to_csv(records) -> str:
    buf = io.StringIO()
    buf.write("index,score,label\n")
    for r in records:
        buf.write(f"{r.sample_index},{r.score:.9g},{r.label}\n")
    return buf.getvalue()


def write_scores_csv(records, path):
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(scores_to_csv(records))


def read_scores_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["index", "score", "label"]:
            raise InvalidInput("score file must have header index,score,label")
        return [ScoreRecord(int(row["index"]), float(row["score"]), int(row["label"]))
                for row in reader]
