"""Evaluation measures for open-set recognition.

All sweep-based metrics enumerate the observed scores as thresholds, group
tied scores at a single threshold, and reduce integer counts, so they agree
exactly with brute-force reference implementations.  Scores are oriented so
that higher means "more known"; for the distance rule the score is the
negated squared distance to the nearest anchor.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .model import OpenSetModel, closed_set_scores

UNKNOWN_LABEL = 0


@dataclass(frozen=True)
class ScoredSample:
    """Per-example record feeding all metrics.

    predicted_class is always the closed-set prediction (1..C), regardless of
    any rejection threshold applied later; true_label is UNKNOWN_LABEL for
    samples of unseen classes.
    """

    score: float
    predicted_class: int
    true_label: int
    is_known: bool


@dataclass
class MetricReport:
    accuracy: float
    auroc: float
    aupr: float
    fpr95: float
    oscr_ccr_at_fpr: float
    macro_f1: float
    threshold_used_for_f1: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, allow_nan=False) + "\n"


def score_bundle(model: OpenSetModel, bundle) -> list[ScoredSample]:
    """Score the union of the known and unknown test sets under the model's rule."""
    out: list[ScoredSample] = []
    ks, kp = closed_set_scores(model, bundle.test_known_x)
    for s, p, y in zip(ks, kp, bundle.test_known_y):
        out.append(ScoredSample(float(s), int(p), int(y), True))
    us, up = closed_set_scores(model, bundle.test_unknown_x)
    for s, p in zip(us, up):
        out.append(ScoredSample(float(s), int(p), UNKNOWN_LABEL, False))
    return out


def write_scores_csv(samples: list[ScoredSample], path) -> None:
    lines = ["score,predicted,label,is_known"]
    for s in samples:
        lines.append(f"{s.score!r},{s.predicted_class},{s.true_label},{int(s.is_known)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _split(samples: list[ScoredSample]):
    known = [s for s in samples if s.is_known]
    unknown = [s for s in samples if not s.is_known]
    return known, unknown


def accuracy(samples: list[ScoredSample]) -> float:
    """Closed-set accuracy over the known samples."""
    known, _ = _split(samples)
    if not known:
        raise ContractError("accuracy needs at least one known sample")
    hits = sum(1 for s in known if s.predicted_class == s.true_label)
    return hits / len(known)


def auroc(samples: list[ScoredSample]) -> float:
    """Rank statistic P(score_known > score_unknown) + 0.5 P(tie)."""
    known, unknown = _split(samples)
    if not known or not unknown:
        raise ContractError("auroc needs both known and unknown samples")
    us = np.sort([s.score for s in unknown])
    wins = 0
    ties = 0
    for s in known:
        lo = int(np.searchsorted(us, s.score, side="left"))
        hi = int(np.searchsorted(us, s.score, side="right"))
        wins += lo
        ties += hi - lo
    return (wins + 0.5 * ties) / (len(known) * len(unknown))


def _threshold_sweep(samples: list[ScoredSample]):
    """Cumulative (threshold, tp, fp) over descending unique scores.

    tp counts knowns and fp counts unknowns with score >= threshold; tied
    scores collapse into a single threshold.
    """
    scores = np.array([s.score for s in samples])
    is_known = np.array([s.is_known for s in samples])
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    is_known = is_known[order]
    sweep = []
    tp = fp = 0
    i = 0
    n = len(samples)
    while i < n:
        j = i
        while j < n and scores[j] == scores[i]:
            tp += bool(is_known[j])
            fp += not is_known[j]
            j += 1
        sweep.append((scores[i], tp, fp))
        i = j
    return sweep


def aupr(samples: list[ScoredSample]) -> float:
    """Step-interpolated area under the precision-recall curve, positives = known."""
    known, unknown = _split(samples)
    if not known:
        raise ContractError("aupr needs at least one known (positive) sample")
    if not unknown:
        raise ContractError("aupr needs at least one unknown (negative) sample")
    n_pos = len(known)
    terms = []
    prev_recall = 0.0
    for _, tp, fp in _threshold_sweep(samples):
        recall = tp / n_pos
        precision = tp / (tp + fp)
        terms.append((recall - prev_recall) * precision)
        prev_recall = recall
    return math.fsum(terms)


def fpr_at_tpr(samples: list[ScoredSample], tpr_target: float = 0.95) -> float:
    """Smallest false-positive rate among observed thresholds reaching the TPR target."""
    known, unknown = _split(samples)
    if not known or not unknown:
        raise ContractError("fpr_at_tpr needs both known and unknown samples")
    if not 0.0 < tpr_target <= 1.0:
        raise ContractError(f"tpr_target must be in (0, 1], got {tpr_target}")
    n_pos, n_neg = len(known), len(unknown)
    for _, tp, fp in _threshold_sweep(samples):
        if tp / n_pos >= tpr_target:
            return fp / n_neg
    return 1.0  # unreachable: the lowest threshold accepts everything


def oscr_ccr_at_fpr(samples: list[ScoredSample], fpr_target: float = 0.1) -> float:
    """Correct classification rate at a false-positive rate budget for rejection.

    Sweeps thresholds over the observed scores (plus a virtual reject-all
    point at FPR 0), takes the operating point with the largest FPR not
    exceeding the budget, and interpolates CCR linearly in FPR towards the
    first point beyond the budget.
    """
    known, unknown = _split(samples)
    if not known or not unknown:
        raise ContractError("oscr needs both known and unknown samples")
    if not 0.0 <= fpr_target <= 1.0:
        raise ContractError(f"fpr_target must be in [0, 1], got {fpr_target}")
    n_pos, n_neg = len(known), len(unknown)

    correct_at = {}
    for s in known:
        if s.predicted_class == s.true_label:
            correct_at[s.score] = correct_at.get(s.score, 0) + 1

    # (fpr, ccr) in increasing-fpr order, starting from the reject-all point;
    # at equal fpr keep the best ccr (thresholds that admit knowns only).
    points = [(0.0, 0.0)]
    cc = 0
    for score, _, fp in _threshold_sweep(samples):
        cc += correct_at.get(score, 0)
        fpr = fp / n_neg
        ccr = cc / n_pos
        if points[-1][0] == fpr:
            points[-1] = (fpr, max(points[-1][1], ccr))
        else:
            points.append((fpr, ccr))

    idx = max(i for i, (f, _) in enumerate(points) if f <= fpr_target)
    f_lo, c_lo = points[idx]
    if f_lo == fpr_target or idx + 1 == len(points):
        return c_lo
    f_hi, c_hi = points[idx + 1]
    return c_lo + (c_hi - c_lo) * (fpr_target - f_lo) / (f_hi - f_lo)


def macro_f1(samples: list[ScoredSample], tau: float) -> float:
    """Unweighted mean F1 over the known classes and the rejection class.

    Rejection at tau maps low-scoring samples to class C+1.  A class with
    neither instances nor predictions is excluded from the mean; a populated
    class with precision + recall = 0 contributes 0.
    """
    if not samples:
        raise ContractError("macro_f1 needs samples")
    c_max = max(max(s.predicted_class for s in samples), max(s.true_label for s in samples))
    unknown_class = c_max + 1
    pairs = []
    for s in samples:
        pred = s.predicted_class if s.score >= tau else unknown_class
        true = s.true_label if s.is_known else unknown_class
        pairs.append((true, pred))

    f1s = []
    for cls in range(1, unknown_class + 1):
        tp = sum(1 for t, p in pairs if t == cls and p == cls)
        fp = sum(1 for t, p in pairs if t != cls and p == cls)
        fn = sum(1 for t, p in pairs if t == cls and p != cls)
        if tp + fp + fn == 0:
            continue  # neither instances nor predictions: excluded
        f1s.append(2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0)
    return math.fsum(f1s) / len(f1s)


def compute_report(
    samples: list[ScoredSample],
    fpr_target: float = 0.1,
    tpr_target: float = 0.95,
    f1_threshold: float = 0.0,
) -> MetricReport:
    return MetricReport(
        accuracy=accuracy(samples),
        auroc=auroc(samples),
        aupr=aupr(samples),
        fpr95=fpr_at_tpr(samples, tpr_target),
        oscr_ccr_at_fpr=oscr_ccr_at_fpr(samples, fpr_target),
        macro_f1=macro_f1(samples, f1_threshold),
        threshold_used_for_f1=f1_threshold,
    )
