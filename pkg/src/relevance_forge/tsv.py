"""Readers and writers for the pipeline's tab-separated file formats."""

from __future__ import annotations

import os
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator

from .recall import CorpusItem

CORPUS_HEADER = ("item_id", "title", "price", "breadcrumb", "image_url")
QUERIES_HEADER = ("query_id", "query_text")
PAIRS_HEADER = ("query_id", "item_id")
TRUTH_HEADER = ("query_id", "item_id", "label")
SCORES_HEADER = ("query_id", "item_id", "score", "model_name")


class DataFormatError(ValueError):
    pass


def format_score(score: float) -> str:
    return f"{score:.9g}"


def _rows(path: str | Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if line:
                yield lineno, line.split("\t")


def _rows_skip_header(path, first_field: str) -> Iterator[tuple[int, list[str]]]:
    for lineno, fields in _rows(path):
        if lineno == 1 and fields[0] == first_field:
            continue
        yield lineno, fields


def write_rows(path: str | Path, header: Iterable[str], rows: Iterable[Iterable[str]]) -> int:
    """Write atomically (temp file + rename) so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    n = 0
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
            n += 1
    os.replace(tmp, path)
    return n


def write_lines(path: str | Path, header: Iterable[str], lines: Iterable[str]) -> None:
    """Like ``write_rows`` for lines that are already tab-joined."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for line in lines:
            fh.write(line + "\n")
    os.replace(tmp, path)


def read_corpus(path: str | Path) -> list[CorpusItem]:
    rows = _rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataFormatError(f"{path}: empty corpus file (header row required)")
    if header[:2] != ["item_id", "title"]:
        raise DataFormatError(f"{path}: header must start with item_id<TAB>title, got {header[:2]}")
    cols = {name: i for i, name in enumerate(header)}
    items = []
    for lineno, f in rows:
        if len(f) < 2:
            raise DataFormatError(f"{path}:{lineno}: expected at least item_id and title")

        def opt(name):
            i = cols.get(name)
            return f[i] if i is not None and i < len(f) and f[i] != "" else None

        price = opt("price")
        if price is not None:
            try:
                price = Decimal(price)
            except InvalidOperation:
                raise DataFormatError(f"{path}:{lineno}: bad price {price!r}")
        items.append(CorpusItem(f[0], f[1], price, opt("breadcrumb"), opt("image_url")))
    return items


def write_corpus(path: str | Path, items: Iterable[CorpusItem]) -> int:
    def row(it: CorpusItem):
        return [
            it.item_id,
            it.title,
            "" if it.price is None else str(it.price),
            it.breadcrumb or "",
            it.image_url or "",
        ]

    return write_rows(path, CORPUS_HEADER, (row(it) for it in items))


def read_queries(path: str | Path) -> list[tuple[str, str]]:
    out = []
    for lineno, f in _rows_skip_header(path, "query_id"):
        if len(f) < 2:
            raise DataFormatError(f"{path}:{lineno}: expected query_id<TAB>query_text")
        out.append((f[0], f[1]))
    return out


def write_queries(path: str | Path, queries: Iterable[tuple[str, str]]) -> int:
    return write_rows(path, QUERIES_HEADER, ([q, t] for q, t in queries))


def read_pairs(path: str | Path) -> list[tuple[str, str]]:
    out = []
    for lineno, f in _rows_skip_header(path, "query_id"):
        if len(f) < 2:
            raise DataFormatError(f"{path}:{lineno}: expected query_id<TAB>item_id")
        out.append((f[0], f[1]))
    return out


def write_pairs(path: str | Path, pairs: Iterable[tuple[str, str]]) -> int:
    return write_rows(path, PAIRS_HEADER, ([q, i] for q, i in pairs))


def read_truth(path: str | Path) -> dict[tuple[str, str], int]:
    out: dict[tuple[str, str], int] = {}
    for lineno, f in _rows_skip_header(path, "query_id"):
        if len(f) < 3 or f[2] not in ("0", "1"):
            raise DataFormatError(f"{path}:{lineno}: expected query_id<TAB>item_id<TAB>label(0|1)")
        out[(f[0], f[1])] = int(f[2])
    return out


def write_truth(path: str | Path, labels: dict[tuple[str, str], int]) -> int:
    return write_rows(path, TRUTH_HEADER, ([q, i, str(l)] for (q, i), l in sorted(labels.items())))


def read_scores(path: str | Path) -> list[tuple[str, str, float | None, str]]:
    """Rows of (query_id, item_id, score, model_name); score is None for ERR rows."""
    out = []
    for lineno, f in _rows_skip_header(path, "query_id"):
        if len(f) != 4:
            raise DataFormatError(f"{path}:{lineno}: expected 4 columns, got {len(f)}")
        score = None if f[2] == "ERR" else float(f[2])
        out.append((f[0], f[1], score, f[3]))
    return out
