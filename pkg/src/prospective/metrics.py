"""Classification and group-fairness metrics, independence gaps, rank correlation."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import ks_2samp, spearmanr


class UndefinedMetricError(ValueError):
    pass


@dataclass
class GroupRates:
    positive_rate: float | None
    tpr: float | None
    fpr: float | None
    ppv: float | None
    npv: float | None
    mean_score: float | None = None
    base_rate: float | None = None


@dataclass
class MetricTable:
    accuracy: float
    precision: float | None
    recall: float | None
    statistical_parity: float | None
    equal_opportunity: float | None
    false_positive_parity: float | None
    positive_predictive_parity: float | None
    negative_predictive_parity: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    women: GroupRates
    men: GroupRates

    DIFFERENCES = (
        "statistical_parity",
        "equal_opportunity",
        "false_positive_parity",
        "positive_predictive_parity",
        "negative_predictive_parity",
    )

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float | None:
    return float(num / den) if den > 0 else None


def _diff(a: float | None, b: float | None) -> float | None:
    return None if a is None or b is None else a - b


def _rates(pred: np.ndarray, y: np.ndarray, scores: np.ndarray | None) -> GroupRates:
    tp = np.sum((pred == 1) & (y == 1))
    fp = np.sum((pred == 1) & (y == 0))
    tn = np.sum((pred == 0) & (y == 0))
    fn = np.sum((pred == 0) & (y == 1))
    return GroupRates(
        positive_rate=_ratio(tp + fp, len(pred)),
        tpr=_ratio(tp, tp + fn),
        fpr=_ratio(fp, fp + tn),
        ppv=_ratio(tp, tp + fp),
        npv=_ratio(tn, tn + fn),
        mean_score=None if scores is None else float(np.mean(scores)),
        base_rate=float(np.mean(y)),
    )


def classification_metrics(preds, labels, A, scores=None) -> MetricTable:
    """Confusion-matrix rates; group differences are (A=1) minus (A=0).

    Rates whose denominator is zero are reported as ``None``.
    """
    pred = np.asarray(preds, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    a = np.asarray(A, dtype=np.int64)
    if not (len(pred) == len(y) == len(a)):
        raise ValueError("predictions, labels and groups differ in length")
    s = None if scores is None else np.asarray(scores, dtype=float)
    for value, name in ((1, "A=1"), (0, "A=0")):
        if not np.any(a == value):
            raise UndefinedMetricError(f"group {name} is empty")
    groups = {v: _rates(pred[a == v], y[a == v], None if s is None else s[a == v]) for v in (0, 1)}
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    g1, g0 = groups[1], groups[0]
    return MetricTable(
        accuracy=(tp + tn) / len(pred),
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        statistical_parity=_diff(g1.positive_rate, g0.positive_rate),
        equal_opportunity=_diff(g1.tpr, g0.tpr),
        false_positive_parity=_diff(g1.fpr, g0.fpr),
        positive_predictive_parity=_diff(g1.ppv, g0.ppv),
        negative_predictive_parity=_diff(g1.npv, g0.npv),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        women=g1,
        men=g0,
    )


@dataclass
class GapResult:
    value: float
    skipped: int = 0  # empty (group, cell) combinations
    kind: str = "sufficiency"

    def __float__(self) -> float:
        return self.value


def score_bins(scores: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency bin codes; tied scores share a bin so fewer bins may result."""
    edges = np.unique(np.quantile(scores, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, scores, side="right")


def independence_gap(scores, outcomes, A, kind: str = "sufficiency", bins: int = 10) -> GapResult:
    """How far the scores are from sufficiency or separation with respect to A.

    ``sufficiency``: bin-mass-weighted average over equal-frequency score bins
    of |P(Y=1 | A=1, bin) - P(Y=1 | A=0, bin)|. Outcomes may be
    probabilities. ``separation``: largest two-sample Kolmogorov-Smirnov
    distance between the groups' score distributions within an outcome class.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    a = np.asarray(A, dtype=np.int64)
    skipped = 0
    if kind == "sufficiency":
        codes = score_bins(s, bins)
        total, mass = 0.0, 0
        for b in np.unique(codes):
            cell = codes == b
            m1, m0 = cell & (a == 1), cell & (a == 0)
            if not m1.any() or not m0.any():
                skipped += 1
                continue
            total += cell.sum() * abs(y[m1].mean() - y[m0].mean())
            mass += cell.sum()
        value = total / mass if mass else float("nan")
    elif kind == "separation":
        value = 0.0
        for level in (0, 1):
            g1, g0 = s[(y == level) & (a == 1)], s[(y == level) & (a == 0)]
            if g1.size == 0 or g0.size == 0:
                skipped += 1
                continue
            value = max(value, float(ks_2samp(g1, g0).statistic))
    else:
        raise ValueError(f"unknown gap kind {kind!r}")
    if skipped:
        warnings.warn(f"{kind} gap skipped {skipped} empty group cells", RuntimeWarning, stacklevel=2)
    return GapResult(float(value), skipped, kind)


def spearman(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedMetricError("rank correlation is undefined for constant input")
    return float(spearmanr(x, y).statistic)
