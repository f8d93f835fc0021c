"""Stage one: inverted index over title terms and OR-semantics candidate recall."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from .textprep import PrepConfig, StopwordSet, SynonymDict, preprocess


class IndexBuildError(ValueError):
    pass


class QueryInputError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusItem:
    item_id: str
    title: str
    price: Decimal | None = None
    breadcrumb: str | None = None
    image_url: str | None = None


@dataclass(frozen=True)
class InvertedIndex:
    postings: dict[str, np.ndarray]
    item_ids: tuple[str, ...]
    cfg: PrepConfig = PrepConfig()

    @property
    def doc_count(self) -> int:
        return len(self.item_ids)

    def postings_as_lists(self) -> dict[str, list[int]]:
        return {t: p.tolist() for t, p in self.postings.items()}

    def dump(self, path: str | Path) -> None:
        payload = {
            "cfg": self.cfg.__dict__,
            "item_ids": list(self.item_ids),
            "postings": {t: self.postings[t].tolist() for t in sorted(self.postings)},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "InvertedIndex":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        postings = {t: np.asarray(p, dtype=np.int64) for t, p in payload["postings"].items()}
        return cls(postings, tuple(payload["item_ids"]), PrepConfig(**payload["cfg"]))


@dataclass
class CandidateSet:
    pairs: list[tuple[str, str]]
    per_query: dict[str, int] = field(default_factory=dict)
    n_queries: int = 0
    doc_count: int = 0

    @property
    def total(self) -> int:
        return len(self.pairs)

    @property
    def reduction_ratio(self) -> float:
        cartesian = self.n_queries * self.doc_count
        return self.total / cartesian if cartesian else 0.0

    def stats_lines(self) -> list[str]:
        cartesian = self.n_queries * self.doc_count
        return [
            f"queries\t{self.n_queries}",
            f"items\t{self.doc_count}",
            f"cartesian_pairs\t{cartesian}",
            f"candidate_pairs\t{self.total}",
            f"reduction_ratio\t{self.reduction_ratio:.6f}",
        ]


def title_config(cfg: PrepConfig) -> PrepConfig:
    # titles are never synonym-expanded
    return replace(cfg, apply_synonyms=False)


def build_index(corpus: list[CorpusItem], cfg: PrepConfig = PrepConfig(), stops: StopwordSet = StopwordSet()) -> InvertedIndex:
    seen: set[str] = set()
    lists: dict[str, list[int]] = {}
    tcfg = title_config(cfg)
    for ordinal, item in enumerate(corpus):
        if not item.item_id:
            raise IndexBuildError(f"empty item_id at position {ordinal}")
        if item.item_id in seen:
            raise IndexBuildError(f"duplicate item_id {item.item_id!r}")
        seen.add(item.item_id)
        for term in dict.fromkeys(preprocess(item.title, tcfg, stops)):
            lists.setdefault(term, []).append(ordinal)
    postings = {t: np.asarray(p, dtype=np.int64) for t, p in lists.items()}
    return InvertedIndex(postings, tuple(it.item_id for it in corpus), cfg)


def query_terms(query: str, cfg: PrepConfig, stops: StopwordSet, synonyms: SynonymDict | None) -> list[str]:
    return list(dict.fromkeys(preprocess(query, cfg, stops, synonyms)))


def recall_ordinals(
    query: str,
    index: InvertedIndex,
    cfg: PrepConfig = PrepConfig(),
    stops: StopwordSet = StopwordSet(),
    synonyms: SynonymDict | None = None,
) -> np.ndarray:
    hits = [index.postings[t] for t in query_terms(query, cfg, stops, synonyms) if t in index.postings]
    if not hits:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(hits))


def recall_candidates(
    query: str,
    index: InvertedIndex,
    cfg: PrepConfig = PrepConfig(),
    stops: StopwordSet = StopwordSet(),
    synonyms: SynonymDict | None = None,
) -> list[str]:
    """Items sharing at least one term with the expanded query, sorted by item_id."""
    ords = recall_ordinals(query, index, cfg, stops, synonyms)
    return sorted(index.item_ids[o] for o in ords)


def recall_all(
    queries: list[tuple[str, str]],
    index: InvertedIndex,
    cfg: PrepConfig = PrepConfig(),
    stops: StopwordSet = StopwordSet(),
    synonyms: SynonymDict | None = None,
) -> CandidateSet:
    counts = Counter(qid for qid, _ in queries)
    dupes = [q for q, c in counts.items() if c > 1]
    if dupes:
        raise QueryInputError(f"duplicate query_id {sorted(dupes)[0]!r}")
    pairs = []
    per_query = {}
    for qid, text in queries:
        items = recall_candidates(text, index, cfg, stops, synonyms)
        per_query[qid] = len(items)
        pairs.extend((qid, iid) for iid in items)
    pairs.sort()
    return CandidateSet(pairs, per_query, len(queries), index.doc_count)
