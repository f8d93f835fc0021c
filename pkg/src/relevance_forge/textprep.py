"""Recall-stage text normalization: tokenize, drop stopwords, expand synonyms, stem."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import snowballstemmer

_TOKEN_RE = re.compile(r"[^\W_]+")
_ASCII_ALPHA_RE = re.compile(r"[a-z]+")


@dataclass(frozen=True)
class StopwordSet:
    words: frozenset[str] = frozenset()

    def __post_init__(self):
        for w in self.words:
            if w != w.lower() or any(c.isspace() for c in w) or not w:
                raise ValueError(f"invalid stopword {w!r}")

    def __contains__(self, term: str) -> bool:
        return term in self.words

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def load(cls, path: str | Path) -> "StopwordSet":
        words = set()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    words.add(line.lower())
        return cls(frozenset(words))

    @classmethod
    def default(cls) -> "StopwordSet":
        ref = resources.files("relevance_forge") / "data" / "stopwords_en.txt"
        with resources.as_file(ref) as path:
            return cls.load(path)


@dataclass(frozen=True)
class SynonymDict:
    """Maps a lowercase term to one or more expansion phrases."""

    entries: dict[str, tuple[tuple[str, ...], ...]] = field(default_factory=dict)

    def __post_init__(self):
        for key, phrases in self.entries.items():
            if key != key.lower():
                raise ValueError(f"synonym key {key!r} is not lowercase")
            for phrase in phrases:
                if not phrase:
                    raise ValueError(f"empty expansion for {key!r}")
                if tuple(phrase) == (key,):
                    raise ValueError(f"{key!r} expands to itself")

    def get(self, term: str) -> tuple[tuple[str, ...], ...]:
        return self.entries.get(term, ())

    @classmethod
    def from_pairs(cls, pairs) -> "SynonymDict":
        entries: dict[str, list[tuple[str, ...]]] = {}
        for term, phrase in pairs:
            words = tuple(phrase.split()) if isinstance(phrase, str) else tuple(phrase)
            bucket = entries.setdefault(term.lower(), [])
            if words not in bucket:
                bucket.append(words)
        return cls({k: tuple(v) for k, v in entries.items()})

    @classmethod
    def load(cls, path: str | Path) -> "SynonymDict":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                term, sep, phrase = line.partition("\t")
                if not sep or not phrase.strip():
                    raise ValueError(f"{path}:{lineno}: expected 'term<TAB>phrase'")
                pairs.append((term.strip(), phrase.lower()))
        return cls.from_pairs(pairs)


@dataclass(frozen=True)
class PrepConfig:
    lowercase: bool = True
    apply_stemming: bool = True
    apply_stopwords: bool = True
    apply_synonyms: bool = True


def basic_tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Split on every non-alphanumeric character, discarding it.

    >>> basic_tokenize("5Pcs B-2 Tone")
    ['5pcs', 'b', '2', 'tone']
    """
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


def remove_stopwords(tokens: list[str], stops: StopwordSet) -> list[str]:
    return [t for t in tokens if t not in stops]


_stemmer = snowballstemmer.stemmer("english")


@lru_cache(maxsize=1 << 16)
def stem(token: str) -> str:
    # Only ASCII-alphabetic tokens are stemmed; digits and mixed tokens pass through.
    if not _ASCII_ALPHA_RE.fullmatch(token):
        return token
    return _stemmer.stemWord(token)


def expand_synonyms(tokens: list[str], synonyms: SynonymDict) -> list[str]:
    """Append expansion terms (one level, deduplicated) after the original tokens."""
    out = list(tokens)
    seen: set[str] = set()
    for tok in tokens:
        for phrase in synonyms.get(tok):
            for term in phrase:
                if term not in seen:
                    seen.add(term)
                    out.append(term)
    return out


def preprocess(
    text: str,
    cfg: PrepConfig = PrepConfig(),
    stops: StopwordSet = StopwordSet(),
    synonyms: SynonymDict | None = None,
) -> list[str]:
    tokens = basic_tokenize(text, lowercase=cfg.lowercase)
    if cfg.apply_stopwords:
        tokens = remove_stopwords(tokens, stops)
    if cfg.apply_synonyms and synonyms is not None:
        tokens = expand_synonyms(tokens, synonyms)
        # expansion phrases are free text; keep the output alphanumeric
        tokens = [p for t in tokens for p in basic_tokenize(t, lowercase=cfg.lowercase)]
    if cfg.apply_stemming:
        tokens = [stem(t) for t in tokens]
    return tokens
