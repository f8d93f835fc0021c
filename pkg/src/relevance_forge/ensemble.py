"""Uniform score averaging across models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .tsv import SCORES_HEADER, format_score, read_scores, write_rows


class EnsembleError(ValueError):
    pass


@dataclass
class ScoreTable:
    rows: dict[tuple[str, str], float]
    model_name: str

    def __post_init__(self):
        for key, s in self.rows.items():
            if not math.isfinite(s):
                raise EnsembleError(f"non-finite score for {key} in {self.model_name!r}")

    @classmethod
    def load(cls, path: str | Path) -> "ScoreTable":
        rows = {}
        names = set()
        for qid, iid, score, name in read_scores(path):
            if score is None:
                raise EnsembleError(f"{path}: ERR row for ({qid}, {iid})")
            if (qid, iid) in rows:
                raise EnsembleError(f"{path}: duplicate pair ({qid}, {iid})")
            rows[(qid, iid)] = score
            names.add(name)
        name = names.pop() if len(names) == 1 else (Path(path).stem if not names else "+".join(sorted(names)))
        return cls(rows, name)

    def save(self, path: str | Path) -> int:
        return write_rows(
            path,
            SCORES_HEADER,
            ([q, i, format_score(s), self.model_name] for (q, i), s in sorted(self.rows.items())),
        )


def ensemble_mean(tables: Sequence[ScoreTable]) -> ScoreTable:
    """Per-pair arithmetic mean of N score tables covering identical pairs.

    Summation runs in a canonical table order (sorted by model name, then by
    the scores themselves), so any input permutation gives the same bits.
    """
    if not tables:
        raise EnsembleError("need at least one score table")
    keys = set(tables[0].rows)
    problems = []
    for t in tables:
        missing = sorted(keys - t.rows.keys()) or sorted(t.rows.keys() - keys)
        if missing:
            problems.append(f"{t.model_name}: first mismatched key {missing[0]}")
    if problems:
        raise EnsembleError("key sets differ: " + "; ".join(problems))
    ordered = sorted(tables, key=lambda t: t.model_name)
    n = len(ordered)
    rows = {}
    for key in sorted(keys):
        vals = sorted(t.rows[key] for t in ordered)
        total = 0.0
        for v in vals:
            total += v
        mean = total / n
        # rounding can push the mean a hair outside the input range
        rows[key] = min(max(mean, vals[0]), vals[-1])
    return ScoreTable(rows, "+".join(t.model_name for t in ordered))
