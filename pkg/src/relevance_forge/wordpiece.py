"""Vocab-driven WordPiece tokenizer and fixed-length query/answer pair encoder."""

from __future__ import annotations

import string
import unicodedata
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
CONTINUATION = "##"
MAX_WORD_CHARS = 200

# Sequence budgets: measured query+title bound, with price/breadcrumb, upstream default.
MAX_SEQ_LEN = 64
MAX_SEQ_LEN_WITH_FEATURES = 78
MAX_SEQ_LEN_UPSTREAM = 128

_ASCII_PUNCT = frozenset(string.punctuation)


class VocabError(ValueError):
    pass


class EncodeConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Vocab:
    token_of: tuple[str, ...]
    id_of: dict[str, int]
    lowercase: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    @property
    def cls_id(self) -> int:
        return self.id_of[CLS]

    @property
    def sep_id(self) -> int:
        return self.id_of[SEP]

    def __len__(self) -> int:
        return len(self.token_of)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], lowercase: bool = True, source: str = "<tokens>") -> "Vocab":
        token_of = []
        id_of: dict[str, int] = {}
        for lineno, tok in enumerate(tokens):
            if tok in id_of:
                raise VocabError(
                    f"{source}: duplicate token {tok!r} on line {lineno + 1} "
                    f"(first seen on line {id_of[tok] + 1})"
                )
            id_of[tok] = lineno
            token_of.append(tok)
        for special in SPECIAL_TOKENS:
            if special not in id_of:
                raise VocabError(f"{source}: missing special token {special}")
        return cls(tuple(token_of), id_of, lowercase)


def load_vocab(path: str | Path, lowercase: bool = True) -> Vocab:
    """Line i (0-based) of the file is token id i."""
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\r\n") for line in fh]
    return Vocab.from_tokens(tokens, lowercase=lowercase, source=str(path))


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.token_of:
            fh.write(tok + "\n")


def _is_punctuation(ch: str) -> bool:
    return ch in _ASCII_PUNCT or unicodedata.category(ch).startswith("P")


def split_words(text: str, lowercase: bool = True) -> list[str]:
    """Whitespace split, with every punctuation character as its own word."""
    if lowercase:
        text = text.lower()
    words = []
    for chunk in text.split():
        current = []
        for ch in chunk:
            if _is_punctuation(ch):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(ch)
            else:
                current.append(ch)
        if current:
            words.append("".join(current))
    return words


def _wordpiece_word(word: str, vocab: Vocab) -> list[str]:
    if len(word) > MAX_WORD_CHARS:
        return [UNK]
    pieces = []
    start = 0
    n = len(word)
    id_of = vocab.id_of
    while start < n:
        end = n
        match = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = CONTINUATION + sub
            if sub in id_of:
                match = sub
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def wordpiece_tokenize(text: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first subword split of every word in ``text``."""
    cache = vocab._cache
    out: list[str] = []
    for word in split_words(text, vocab.lowercase):
        pieces = cache.get(word)
        if pieces is None:
            pieces = _wordpiece_word(word, vocab)
            if len(cache) < 500_000:
                cache[word] = pieces
        out.extend(pieces)
    return out


def compose_answer(title: str, price: float | Decimal | None = None, breadcrumb: str | None = None) -> str:
    """Join title, price and breadcrumb with "|"; absent fields are skipped."""
    parts = [title]
    if price is not None:
        parts.append(f"{Decimal(str(price)):.2f}")
    if breadcrumb:
        parts.append(breadcrumb)
    return "|".join(parts)


@dataclass(frozen=True)
class EncodedSequence:
    ids: np.ndarray
    mask: np.ndarray
    segments: np.ndarray

    @property
    def max_seq_len(self) -> int:
        return len(self.ids)

    def to_tsv(self) -> str:
        return "\t".join(",".join(map(str, a.tolist())) for a in (self.ids, self.mask, self.segments))

    @classmethod
    def from_tsv(cls, line: str) -> "EncodedSequence":
        fields = line.rstrip("\n").split("\t")
        arrs = [np.array([int(x) for x in f.split(",")], dtype=np.int64) for f in fields]
        return cls(*arrs)


def truncate_pair(q: list, a: list, budget: int) -> tuple[list, list]:
    """Trim from the tail of the longer side (ties trim the answer) until both fit."""
    q, a = list(q), list(a)
    while len(q) + len(a) > budget:
        if len(q) > len(a):
            q.pop()
        else:
            a.pop()
    return q, a


def encode_ids(q_ids: list[int], a_ids: list[int], vocab: Vocab, max_seq_len: int) -> EncodedSequence:
    if max_seq_len < 5:
        raise EncodeConfigError(f"max_seq_len must be >= 5, got {max_seq_len}")
    q_ids, a_ids = truncate_pair(q_ids, a_ids, max_seq_len - 3)
    ids = np.full(max_seq_len, vocab.pad_id, dtype=np.int64)
    mask = np.zeros(max_seq_len, dtype=np.int64)
    segments = np.zeros(max_seq_len, dtype=np.int64)
    body = [vocab.cls_id, *q_ids, vocab.sep_id, *a_ids, vocab.sep_id]
    n = len(body)
    ids[:n] = body
    mask[:n] = 1
    segments[len(q_ids) + 2 : n] = 1
    return EncodedSequence(ids, mask, segments)


def tokens_to_ids(tokens: list[str], vocab: Vocab) -> list[int]:
    unk = vocab.unk_id
    return [vocab.id_of.get(t, unk) for t in tokens]


def encode_pair(query: str, answer: str, vocab: Vocab, max_seq_len: int = MAX_SEQ_LEN) -> EncodedSequence:
    """Build ``[CLS] query [SEP] answer [SEP] [PAD]...`` of exactly ``max_seq_len`` ids."""
    if max_seq_len < 5:
        raise EncodeConfigError(f"max_seq_len must be >= 5, got {max_seq_len}")
    q_ids = tokens_to_ids(wordpiece_tokenize(query, vocab), vocab)
    a_ids = tokens_to_ids(wordpiece_tokenize(answer, vocab), vocab)
    return encode_ids(q_ids, a_ids, vocab, max_seq_len)


def stack(seqs: list[EncodedSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not seqs:
        empty = np.zeros((0, 0), dtype=np.int64)
        return empty, empty, empty
    return (
        np.stack([s.ids for s in seqs]),
        np.stack([s.mask for s in seqs]),
        np.stack([s.segments for s in seqs]),
    )


def stream_encode(src: TextIO, dst: TextIO, vocab: Vocab, max_seq_len: int = MAX_SEQ_LEN) -> int:
    """Encode ``query<TAB>answer`` lines from ``src``; one record per line to ``dst``."""
    n = 0
    for lineno, line in enumerate(src, 1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        query, sep, answer = line.partition("\t")
        if not sep:
            raise ValueError(f"line {lineno}: expected query<TAB>answer")
        dst.write(encode_pair(query, answer, vocab, max_seq_len).to_tsv() + "\n")
        n += 1
    return n
