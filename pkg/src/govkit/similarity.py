"""Output similarity metrics and threshold calibration.

Four metrics compare an original output against a replayed one:
positional character match, word-set Jaccard, character trigram cosine,
and TF-IDF cosine. An ensemble flags a pair when any single metric drops
below its per-metric threshold; calibration picks those thresholds from
labeled score data by maximizing Youden's J.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Mapping, Optional, Sequence, Tuple

METRIC_NAMES = ("char_match", "jaccard", "ngram_cosine", "tfidf_cosine")

# Defaults for the ensemble gate; callers with their own calibration data
# pass explicit thresholds instead.
DEFAULT_THRESHOLDS: Dict[str, float] = {
    "char_match": 0.146,
    "jaccard": 0.408,
    "ngram_cosine": 0.809,
    "tfidf_cosine": 0.837,
}

SAME_MODEL = "same_model"
CROSS_MODEL = "cross_model"


def char_match(a: str, b: str) -> Fraction:
    """Fraction of positions with equal characters, over the longer length.

    Two empty strings count as a perfect match.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return Fraction(1)
    matches = sum(1 for x, y in zip(a, b) if x == y)
    return Fraction(matches, longest)


def jaccard(a: str, b: str) -> Fraction:
    """Word-set overlap under whitespace tokenization; 1 when both are empty."""
    wa, wb = set(a.split()), set(b.split())
    if not wa and not wb:
        return Fraction(1)
    return Fraction(len(wa & wb), len(wa | wb))


def _cosine(ca: Counter, cb: Counter) -> float:
    if ca == cb:
        # Identical vectors, including the all-empty case.
        return 1.0
    if not ca or not cb:
        return 0.0
    dot = sum(count * cb[key] for key, count in ca.items())
    norm = math.sqrt(sum(c * c for c in ca.values())) * math.sqrt(
        sum(c * c for c in cb.values())
    )
    return min(1.0, max(0.0, dot / norm))


def ngram_cosine(a: str, b: str, n: int = 3) -> float:
    """Cosine over character n-gram counts (trigrams by default)."""
    if n < 1:
        raise ValueError("n must be positive")
    ca = Counter(a[i : i + n] for i in range(len(a) - n + 1))
    cb = Counter(b[i : i + n] for i in range(len(b) - n + 1))
    if not ca and not cb:
        return 1.0 if a == b else 0.0
    return _cosine(ca, cb)


def tfidf_cosine(a: str, b: str) -> float:
    """Cosine over TF-IDF vectors fitted on just these two documents.

    IDF uses the smoothed form log((1 + N) / (1 + df)) + 1 with N = 2, so
    shared terms weigh 1 and exclusive terms slightly more.
    """
    ta, tb = Counter(a.split()), Counter(b.split())
    if ta == tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    vocabulary = set(ta) | set(tb)
    idf = {
        term: math.log(3 / (1 + ((term in ta) + (term in tb)))) + 1
        for term in vocabulary
    }
    va = Counter({term: ta[term] * idf[term] for term in ta})
    vb = Counter({term: tb[term] * idf[term] for term in tb})
    return _cosine(va, vb)


def similarity_scores(a: str, b: str) -> Dict[str, float]:
    """All four metrics as floats, keyed by METRIC_NAMES."""
    return {
        "char_match": float(char_match(a, b)),
        "jaccard": float(jaccard(a, b)),
        "ngram_cosine": ngram_cosine(a, b),
        "tfidf_cosine": tfidf_cosine(a, b),
    }


@dataclass(frozen=True)
class SimilarityReport:
    char_match: Fraction
    jaccard: Fraction
    ngram_cosine: float
    tfidf_cosine: float
    ensemble_flagged: bool
    thresholds_used: Mapping[str, float]

    def metric_values(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in METRIC_NAMES}

    def __post_init__(self) -> None:
        below = any(
            getattr(self, name) < self.thresholds_used[name]
            for name in METRIC_NAMES
        )
        if self.ensemble_flagged != below:
            raise ValueError("flag must equal the any-metric-below test")


def ensemble_evaluate(
    a: str, b: str, thresholds: Optional[Mapping[str, float]] = None
) -> SimilarityReport:
    """Score a pair on all four metrics and apply the any-below flag rule."""
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    missing = [name for name in METRIC_NAMES if name not in thresholds]
    if missing:
        raise ValueError(f"thresholds missing metrics: {missing}")
    used = {name: float(thresholds[name]) for name in METRIC_NAMES}
    cm = char_match(a, b)
    jc = jaccard(a, b)
    ng = ngram_cosine(a, b)
    tf = tfidf_cosine(a, b)
    flagged = (
        cm < used["char_match"]
        or jc < used["jaccard"]
        or ng < used["ngram_cosine"]
        or tf < used["tfidf_cosine"]
    )
    return SimilarityReport(
        char_match=cm,
        jaccard=jc,
        ngram_cosine=ng,
        tfidf_cosine=tf,
        ensemble_flagged=flagged,
        thresholds_used=used,
    )


@dataclass(frozen=True)
class MetricCalibration:
    threshold: float
    youden_j: float
    f1: float
    same_model_mean: float
    cross_model_mean: float
    separation: float
    cohens_d: float
    cross_model_pass_rate: float

    def __post_init__(self) -> None:
        if not -1.0 <= self.youden_j <= 1.0:
            raise ValueError("Youden's J lies in [-1, 1]")


@dataclass(frozen=True)
class CalibrationReport:
    metrics: Mapping[str, MetricCalibration]
    n_same: int
    n_cross: int

    def as_json_dict(self) -> dict:
        return {
            "n_same": self.n_same,
            "n_cross": self.n_cross,
            "metrics": {
                name: {
                    "threshold": cal.threshold,
                    "youden_j": cal.youden_j,
                    "f1": cal.f1,
                    "same_model_mean": cal.same_model_mean,
                    "cross_model_mean": cal.cross_model_mean,
                    "separation": cal.separation,
                    "cohens_d": cal.cohens_d,
                    "cross_model_pass_rate": cal.cross_model_pass_rate,
                }
                for name, cal in self.metrics.items()
            },
        }


def _pooled_sd(xs: Sequence[float], ys: Sequence[float]) -> float:
    df = len(xs) + len(ys) - 2
    if df <= 0:
        return 0.0
    ssq = 0.0
    for values in (xs, ys):
        if len(values) >= 2:
            ssq += (len(values) - 1) * statistics.variance(values)
    return math.sqrt(ssq / df)


def _confusion(
    same: Sequence[float], cross: Sequence[float], threshold: float
) -> Tuple[int, int, int, int]:
    # Pass means score >= threshold; the positive class is same_model.
    tp = sum(1 for s in same if s >= threshold)
    fn = len(same) - tp
    fp = sum(1 for s in cross if s >= threshold)
    tn = len(cross) - fp
    return tp, fn, fp, tn


def calibrate_thresholds(
    pairs: Sequence[Tuple[Mapping[str, float], str]]
) -> CalibrationReport:
    """Pick per-metric thresholds maximizing J = TPR - FPR.

    `pairs` holds (score vector, label) entries with labels same_model or
    cross_model. Candidate thresholds are the lowest observed score plus
    all midpoints between consecutive distinct scores; ties on J resolve
    to the lowest threshold.
    """
    same_vectors, cross_vectors = [], []
    for scores, label in pairs:
        if label == SAME_MODEL:
            same_vectors.append(scores)
        elif label == CROSS_MODEL:
            cross_vectors.append(scores)
        else:
            raise ValueError(f"unknown label {label!r}")
    if not same_vectors or not cross_vectors:
        raise ValueError("calibration needs both same_model and cross_model pairs")

    metrics = {}
    for name in METRIC_NAMES:
        try:
            same = [float(v[name]) for v in same_vectors]
            cross = [float(v[name]) for v in cross_vectors]
        except KeyError as exc:
            raise ValueError(f"score vector missing metric {name!r}") from exc
        distinct = sorted(set(same) | set(cross))
        candidates = [distinct[0]] + [
            (lo + hi) / 2 for lo, hi in zip(distinct, distinct[1:])
        ]
        best_threshold, best_j = candidates[0], -2.0
        for threshold in candidates:
            tp, fn, fp, tn = _confusion(same, cross, threshold)
            j = tp / len(same) - fp / len(cross)
            if j > best_j:
                best_threshold, best_j = threshold, j
        tp, fn, fp, tn = _confusion(same, cross, best_threshold)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        same_mean = statistics.mean(same)
        cross_mean = statistics.mean(cross)
        if cross_mean == 0.0:
            separation = math.inf if same_mean > 0 else 1.0
        else:
            separation = same_mean / cross_mean
        pooled = _pooled_sd(same, cross)
        if pooled == 0.0:
            cohens_d = math.inf if same_mean != cross_mean else 0.0
        else:
            cohens_d = (same_mean - cross_mean) / pooled
        metrics[name] = MetricCalibration(
            threshold=best_threshold,
            youden_j=best_j,
            f1=f1,
            same_model_mean=same_mean,
            cross_model_mean=cross_mean,
            separation=separation,
            cohens_d=cohens_d,
            cross_model_pass_rate=fp / len(cross),
        )
    return CalibrationReport(
        metrics=metrics, n_same=len(same_vectors), n_cross=len(cross_vectors)
    )
