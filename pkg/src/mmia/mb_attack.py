"""Metric-based membership inference.

A shadow model is scored on its own members and non-members; the resulting
similarity scores calibrate either a single-metric threshold or a linear
maximum-margin classifier over all four scores. Target samples are then
labelled from the scores of the target model's captions.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .captioner import MAX_LEN, caption_batch
from .errors import EmptyCaption, FormatError, SingleClassError
from .textsim import ScoreVector, score_vector_multi

log = logging.getLogger(__name__)

MEMBER, NONMEMBER, UNKNOWN = "member", "nonmember", "unknown"
METRICS = ("bleu1", "bleu2", "bleu3", "rouge_l")
SCORE_HEADER = ["sample_id", "bleu1", "bleu2", "bleu3", "rougeL", "label"]


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    scores: ScoreVector
    label: Optional[str] = None


@dataclass(frozen=True)
class MarginClassifier:
    weights: tuple
    bias: float

    def decision(self, scores):
        return float(np.dot(self.weights, _as_array(scores)) + self.bias)


@dataclass(frozen=True)
class ThresholdAttacker:
    threshold: float
    metric: str = "rouge_l"

    def decision(self, scores):
        return float(getattr(scores, self.metric))


def _as_array(scores):
    return np.asarray(scores.as_tuple() if isinstance(scores, ScoreVector) else scores, dtype=float)


def collect_scores(model, pairs, label=None, max_len=MAX_LEN):
    """Caption every pair with ``model`` and score it against all its references."""
    if not pairs:
        return []
    generated = caption_batch(model, [p.image for p in pairs], max_len)
    records = []
    for pair, cand in zip(pairs, generated):
        try:
            sv = score_vector_multi(cand, pair.captions)
        except EmptyCaption:
            log.warning("skipping %s: empty generated caption", pair.id)
            continue
        records.append(ScoreRecord(pair.id, sv, label))
    return records


def threshold_accuracy(member_scores, nonmember_scores, t):
    """Balanced accuracy of the rule ``score >= t -> member``."""
    tpr = np.mean(np.asarray(member_scores) >= t)
    tnr = np.mean(np.asarray(nonmember_scores) < t)
    return float((tpr + tnr) / 2)


def threshold_candidates(member_scores, nonmember_scores):
    values = np.unique(np.concatenate([member_scores, nonmember_scores]))
    # the lowest value stands in for "everything is a member"
    return np.concatenate([values[:1], (values[1:] + values[:-1]) / 2])


def fit_threshold(member_scores, nonmember_scores):
    """Best balanced-accuracy threshold; the smallest one wins ties."""
    if len(member_scores) == 0 or len(nonmember_scores) == 0:
        raise SingleClassError("both member and non-member scores are required")
    best_t, best_acc = None, -1.0
    for t in threshold_candidates(member_scores, nonmember_scores):
        acc = threshold_accuracy(member_scores, nonmember_scores, t)
        if acc > best_acc:
            best_t, best_acc = float(t), acc
    return best_t


def hinge_objective(w, b, x, y, c):
    margins = 1 - y * (x @ w + b)
    return float(np.maximum(margins, 0).mean() + (w @ w) / c)


def fit_margin_classifier(records, c=100.0, iters=3000, lr=1.0, seed=0):
    """Linear soft-margin classifier by full-batch subgradient descent.

    Minimises ``mean(max(0, 1 - y (w.s + b))) + ||w||^2 / c`` with members
    encoded as +1. The iterate with the lowest objective is returned. ``seed``
    only sets the (small) random starting point.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    labels = {r.label for r in records}
    if labels != {MEMBER, NONMEMBER}:
        raise SingleClassError(f"need both classes, got {sorted(map(str, labels))}")
    x = np.array([_as_array(r.scores) for r in records])
    y = np.array([1.0 if r.label == MEMBER else -1.0 for r in records])
    rng = np.random.default_rng(seed)
    w, b = rng.normal(0, 1e-3, x.shape[1]), 0.0
    best = (hinge_objective(w, b, x, y, c), w.copy(), b)
    n = len(y)
    for t in range(1, iters + 1):
        active = (y * (x @ w + b)) < 1
        gw = -(y[active, None] * x[active]).sum(axis=0) / n + 2 * w / c
        gb = -y[active].sum() / n
        step = lr / np.sqrt(t)
        w, b = w - step * gw, b - step * gb
        obj = hinge_objective(w, b, x, y, c)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    _, w, b = best
    return MarginClassifier(tuple(float(v) for v in w), float(b))


def infer_mb(attacker, scores):
    """``member`` iff the margin decision is >= 0, or the metric score is >= threshold."""
    if isinstance(attacker, ThresholdAttacker):
        return MEMBER if attacker.decision(scores) >= attacker.threshold else NONMEMBER
    return MEMBER if attacker.decision(scores) >= 0 else NONMEMBER


def fit_attacker(shadow_records, mode="margin", c=100.0, metric="rouge_l", seed=0):
    if mode == "margin":
        return fit_margin_classifier(shadow_records, c=c, seed=seed)
    if mode == "threshold":
        mem = [getattr(r.scores, metric) for r in shadow_records if r.label == MEMBER]
        non = [getattr(r.scores, metric) for r in shadow_records if r.label == NONMEMBER]
        return ThresholdAttacker(fit_threshold(mem, non), metric)
    raise ValueError(f"unknown MB attack mode {mode!r}")


def shadow_accuracy(attacker, records):
    truth = [r.label for r in records]
    pred = [infer_mb(attacker, r.scores) for r in records]
    return float(np.mean([p == t for p, t in zip(pred, truth)]))


def attacker_to_dict(attacker):
    if isinstance(attacker, ThresholdAttacker):
        return {"mode": "threshold", "threshold": attacker.threshold, "metric": attacker.metric}
    return {"mode": "margin", "weights": list(attacker.weights), "bias": attacker.bias}


def attacker_from_dict(d):
    if d["mode"] == "threshold":
        return ThresholdAttacker(d["threshold"], d["metric"])
    return MarginClassifier(tuple(d["weights"]), d["bias"])


def write_scores(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for r in records:
            w.writerow([r.sample_id, *(repr(v) for v in r.scores.as_tuple()), r.label or UNKNOWN])


def read_scores(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != SCORE_HEADER:
        raise FormatError(f"{path}: bad score table header")
    out = []
    for row in rows[1:]:
        try:
            vals = ScoreVector(*map(float, row[1:5]))
        except (ValueError, TypeError) as e:
            raise FormatError(f"{path}: bad row for {row[:1]}") from e
        out.append(ScoreRecord(row[0], vals, None if row[5] == UNKNOWN else row[5]))
    return out
