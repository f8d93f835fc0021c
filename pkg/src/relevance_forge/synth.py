"""Seeded synthetic storefront: items, queries, relevance labels, and a vocab.

Each item is either a main product of some kind ("fender red guitar ...") or an
accessory that mentions a product kind without being one ("guitar strings
...") or unrelated filler. A query names a product kind, optionally with a
color; an item is relevant when it is a main product of that kind and, if the
query names a color, has that color. Accessories are exactly the
term-matching false positives the second stage exists to remove.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .recall import CorpusItem
from .wordpiece import SPECIAL_TOKENS, Vocab, split_words

KINDS = ["guitar", "laptop", "camera", "sneaker", "backpack", "blender", "drone", "kettle",
         "monitor", "jacket", "keyboard", "headphone", "tent", "bicycle", "watch", "lamp"]
ACCESSORIES = ["strings", "strap", "case", "cover", "charger", "cable", "lens", "cap", "stand",
               "replacement", "parts", "bag", "mount", "adapter", "filter", "battery"]
COLORS = ["red", "blue", "black", "white", "green", "silver", "pink", "gray"]
BRANDS = ["acme", "zenith", "nova", "orbit", "vertex", "polar", "summit", "kestrel", "lumen", "atlas"]
FILLER = ["premium", "portable", "compact", "classic", "pro", "ultra", "lightweight", "durable",
          "wireless", "deluxe", "edition", "series", "new", "original", "2pcs", "5pcs", "set", "kit",
          "for", "with", "and", "the", "men", "women", "kids", "outdoor", "home", "office"]
CATEGORY = {"guitar": "Music", "keyboard": "Music", "headphone": "Electronics", "laptop": "Electronics",
            "camera": "Electronics", "monitor": "Electronics", "drone": "Electronics", "watch": "Fashion",
            "sneaker": "Fashion", "jacket": "Fashion", "backpack": "Outdoors", "tent": "Outdoors",
            "bicycle": "Outdoors", "blender": "Home", "kettle": "Home", "lamp": "Home"}


@dataclass
class SynthItem:
    item: CorpusItem
    kind: str
    color: str | None
    is_accessory: bool


@dataclass
class SynthData:
    items: list[SynthItem]
    queries: list[tuple[str, str]]
    query_intent: dict[str, tuple[str, str | None]]

    @property
    def corpus(self) -> list[CorpusItem]:
        return [s.item for s in self.items]

    def is_relevant(self, query_id: str, item_id: str) -> int:
        kind, color = self.query_intent[query_id]
        s = self._by_id[item_id]
        return int(s.kind == kind and not s.is_accessory and (color is None or s.color == color))

    def __post_init__(self):
        self._by_id = {s.item.item_id: s for s in self.items}

    def labels(self, pairs) -> dict[tuple[str, str], int]:
        return {(q, i): self.is_relevant(q, i) for q, i in pairs}


def generate(n_items: int = 1000, n_queries: int = 10, seed: int = 0) -> SynthData:
    rng = np.random.default_rng(seed)
    width = len(str(max(n_items - 1, 1)))
    items = []
    for k in range(n_items):
        kind = KINDS[rng.integers(len(KINDS))]
        brand = BRANDS[rng.integers(len(BRANDS))]
        extra = [FILLER[j] for j in rng.choice(len(FILLER), size=rng.integers(1, 5), replace=False)]
        roll = rng.random()
        color = None
        if roll < 0.55:
            color = COLORS[rng.integers(len(COLORS))]
            words = [brand, color, kind + ("s" if rng.random() < 0.2 else "")] + extra
            accessory = False
        elif roll < 0.9:
            acc = ACCESSORIES[rng.integers(len(ACCESSORIES))]
            words = [brand, kind, acc] + extra
            accessory = True
        else:
            words = [brand] + extra + [ACCESSORIES[rng.integers(len(ACCESSORIES))]]
            kind, accessory = "", True
        price = Decimal(int(rng.integers(199, 99999))) / 100
        crumb = f"{CATEGORY.get(kind, 'Misc')}|{kind.capitalize() or 'Other'}"
        title = " ".join(words).capitalize()
        item = CorpusItem(f"i{k:0{width}d}", title, price, crumb, None)
        items.append(SynthItem(item, kind, color, accessory))

    queries = []
    intent = {}
    qwidth = len(str(max(n_queries - 1, 1)))
    for k in range(n_queries):
        kind = KINDS[k % len(KINDS)]
        color = COLORS[rng.integers(len(COLORS))] if rng.random() < 0.4 else None
        qid = f"q{k:0{qwidth}d}"
        text = f"{color} {kind}" if color else kind
        if rng.random() < 0.3:
            text += "s"
        queries.append((qid, text))
        intent[qid] = (kind, color)
    return SynthData(items, queries, intent)


def synonym_pairs() -> list[tuple[str, str]]:
    return [("sneakers", "running shoes"), ("laptop", "notebook computer"), ("headphone", "earphone")]


def build_vocab(texts, min_count: int = 2, lowercase: bool = True) -> Vocab:
    """Whole words seen at least ``min_count`` times, plus single characters and their
    ``##`` continuations so every rarer ASCII word still decomposes."""
    counts = Counter(w for t in texts for w in split_words(t, lowercase))
    chars = sorted({c for w in counts for c in w} | set("abcdefghijklmnopqrstuvwxyz0123456789"))
    tokens = list(SPECIAL_TOKENS)
    tokens += [w for w in sorted(counts) if counts[w] >= min_count and len(w) > 1]
    tokens += chars
    tokens += ["##" + c for c in chars]
    tokens += ["##s", "##es", "##ing", "##ed"]
    return Vocab.from_tokens(list(dict.fromkeys(tokens)), lowercase=lowercase)
