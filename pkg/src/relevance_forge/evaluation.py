"""Precision, recall, overall and per-query F1, and decision-threshold sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Iterable, Literal, Mapping

import numpy as np

from ._accel import sweep_per_query
from .ensemble import ScoreTable

Pair = tuple[str, str]
Objective = Literal["overall", "per_query"]


class EvalContractError(ValueError):
    pass


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None
    per_query_f1: dict[str, float] = field(default_factory=dict)
    mean_per_query_f1: float = float("nan")
    threshold: float | None = None
    notes: list[str] = field(default_factory=list)

    def text(self) -> str:
        def fmt(x):
            return "absent" if x is None else f"{x:.4f}"

        lines = [
            f"threshold          {fmt(self.threshold)}",
            f"TP FP FN TN        {self.tp} {self.fp} {self.fn} {self.tn}",
            f"precision          {fmt(self.precision)}",
            f"recall             {fmt(self.recall)}",
            f"f1                 {fmt(self.f1)}",
            f"mean_per_query_f1  {fmt(self.mean_per_query_f1)}",
            f"queries            {len(self.per_query_f1)}",
        ]
        lines += [f"note               {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def per_query_tsv(self) -> str:
        rows = ["query_id\tf1"] + [f"{q}\t{f:.6f}" for q, f in sorted(self.per_query_f1.items())]
        return "\n".join(rows) + "\n"


def harmonic_f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _f1_counts(tp: int, fp: int, fn: int) -> float:
    # empty truth and empty predictions counts as a perfect abstention
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def mean_per_query_f1(
    predictions: Collection[Pair],
    truth: Collection[Pair],
    universe: Collection[Pair],
    queries: Iterable[str] | None = None,
) -> tuple[float, dict[str, float]]:
    """Unweighted mean over queries of the F1 within each query's judged pairs."""
    pred, true = set(predictions), set(truth)
    qs = sorted(set(queries) if queries is not None else {q for q, _ in universe})
    counts = {q: [0, 0, 0] for q in qs}
    for pair in universe:
        c = counts.get(pair[0])
        if c is None:
            raise EvalContractError(f"pair {pair} has a query_id outside the query list")
        p, t = pair in pred, pair in true
        if p and t:
            c[0] += 1
        elif p:
            c[1] += 1
        elif t:
            c[2] += 1
    per_query = {q: _f1_counts(*counts[q]) for q in qs}
    mean = float(np.mean(list(per_query.values()))) if per_query else float("nan")
    return mean, per_query


def precision_recall_f1(
    predictions: Collection[Pair],
    truth: Collection[Pair],
    universe: Collection[Pair],
    queries: Iterable[str] | None = None,
) -> EvalReport:
    uni = set(universe)
    pred, true = set(predictions), set(truth)
    outside = pred - uni
    if outside:
        raise EvalContractError(f"prediction {min(outside)} is not in the judged universe")
    if true - uni:
        raise EvalContractError(f"truth pair {min(true - uni)} is not in the judged universe")
    tp = len(pred & true)
    fp = len(pred) - tp
    fn = len(true) - tp
    tn = len(uni) - tp - fp - fn
    notes = []
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None:
        notes.append("precision undefined: no predicted positives")
    if recall is None:
        notes.append("recall undefined: no true positives in truth")
    f1 = harmonic_f1(precision, recall) if precision is not None and recall is not None else None
    if f1 is None:
        notes.append("f1 undefined")
    mean, per_query = mean_per_query_f1(pred, true, uni, queries)
    return EvalReport(tp, fp, fn, tn, precision, recall, f1, per_query, mean, None, notes)


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """0, every midpoint between adjacent distinct scores, and 1 (ascending)."""
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.unique(np.concatenate([[0.0], mids, [1.0]]))


def _overall_objective(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    pos_from_top = np.concatenate([[0], np.cumsum(labels[order][::-1])])
    n_pred = len(s) - np.searchsorted(s, thresholds, side="left")
    tp = pos_from_top[n_pred]
    fp = n_pred - tp
    fn = labels.sum() - tp
    denom = 2 * tp + fp + fn
    out = np.zeros(len(thresholds))
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


PER_QUERY_TIE_TOL = 1e-12


def sweep_threshold(
    scores: ScoreTable | Mapping[Pair, float],
    truth: Collection[Pair],
    universe: Collection[Pair] | None = None,
    objective: Objective = "overall",
) -> tuple[float, EvalReport]:
    """Pick the threshold (predict positive when score >= threshold) maximizing the objective.

    Ties go to the higher threshold.
    """
    rows = scores.rows if isinstance(scores, ScoreTable) else dict(scores)
    if not rows:
        raise EvalContractError("empty score table")
    uni = sorted(rows if universe is None else set(universe))
    missing = [p for p in uni if p not in rows]
    if missing:
        raise EvalContractError(f"no score for judged pair {missing[0]}")
    true = set(truth)
    s = np.array([rows[p] for p in uni], dtype=np.float64)
    y = np.array([p in true for p in uni], dtype=bool)
    thresholds = candidate_thresholds(s)
    if objective == "overall":
        obj = _overall_objective(s, y.astype(np.int64), thresholds)
        best = np.flatnonzero(obj == obj.max())[-1]
    elif objective == "per_query":
        qnames = sorted({q for q, _ in uni})
        qpos = {q: i for i, q in enumerate(qnames)}
        qidx = np.array([qpos[q] for q, _ in uni], dtype=np.int64)
        obj = sweep_per_query(s, y, qidx, len(qnames), thresholds)
        best = np.flatnonzero(obj >= obj.max() - PER_QUERY_TIE_TOL)[-1]
    else:
        raise EvalContractError(f"unknown objective {objective!r}")
    thr = float(thresholds[best])
    predicted = {p for p, v in zip(uni, s) if v >= thr}
    report = precision_recall_f1(predicted, true & set(uni), uni)
    report.threshold = thr
    return thr, report


def evaluate_at(
    scores: ScoreTable | Mapping[Pair, float],
    truth: Collection[Pair],
    threshold: float,
    universe: Collection[Pair] | None = None,
) -> EvalReport:
    rows = scores.rows if isinstance(scores, ScoreTable) else dict(scores)
    uni = set(rows) if universe is None else set(universe)
    predicted = {p for p in uni if p in rows and rows[p] >= threshold}
    report = precision_recall_f1(predicted, set(truth) & uni, uni)
    report.threshold = threshold
    return report
