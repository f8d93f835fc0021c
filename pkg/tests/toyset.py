"""Seeded linearly separable toy set built on the frozen encoder."""

import numpy as np

from conftest import letter_vocab
from relevance_forge.scorer import EncoderParams, LabeledPair, encode_batch, split_per_query
from relevance_forge.wordpiece import encode_pair

WORDS = ["red", "blue", "guitar", "strap", "case", "laptop", "charger", "camera", "lens", "tent",
         "pole", "kettle", "lid", "watch", "band", "lamp", "bulb", "drone", "prop", "bag"]
ENCODER = EncoderParams(dim=16, seed=5, table_size=512)
MARGIN = 0.05


def make_toy(n=600, seed=0, enc=ENCODER):
    """Labels are the sign of the first pooled coordinate; near-zero points are dropped."""
    rng = np.random.default_rng(seed)
    vocab = letter_vocab(WORDS)
    seqs, qids = [], []
    for k in range(n):
        q = " ".join(rng.choice(WORDS, size=rng.integers(1, 3)))
        a = " ".join(rng.choice(WORDS, size=rng.integers(2, 7)))
        seqs.append(encode_pair(q, a, vocab, 16))
        qids.append(f"q{k % 12:02d}")
    H = encode_batch(np.stack([s.ids for s in seqs]), np.stack([s.mask for s in seqs]),
                     np.stack([s.segments for s in seqs]), enc)
    keep = np.abs(H[:, 0]) > MARGIN
    pairs = [LabeledPair(qids[i], f"i{i:04d}", seqs[i], int(H[i, 0] > 0)) for i in np.flatnonzero(keep)]
    return pairs, H[keep]


def toy_split(seed=0):
    pairs, _ = make_toy(seed=seed)
    return split_per_query(pairs, 0.1, seed)
