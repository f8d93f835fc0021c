"""Builds a self-contained scoring workspace from the synthetic generator."""

from pathlib import Path

import numpy as np

from relevance_forge import synth, tsv
from relevance_forge.orchestrator import ScoringJob
from relevance_forge.scorer import EncoderParams, MlpHead, Model, save_model
from relevance_forge.wordpiece import save_vocab


def make_workspace(root: Path, n_items: int = 200, n_queries: int = 5, seed: int = 0,
                   n_pairs: int | None = None) -> Path:
    """Writes corpus, queries, vocab, a random MLP model and a shuffled candidate list."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    data = synth.generate(n_items, n_queries, seed)
    tsv.write_corpus(root / "corpus.tsv", data.corpus)
    tsv.write_queries(root / "queries.tsv", data.queries)
    vocab = synth.build_vocab([it.title for it in data.corpus] + [t for _, t in data.queries])
    save_vocab(vocab, root / "vocab.txt")
    enc = EncoderParams(16, seed, 997)
    save_model(Model(MlpHead.init(16, 8, seed), enc), root / "m.model")
    pairs = [(q, it.item_id) for q, _ in data.queries for it in data.corpus]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    if n_pairs is not None:
        order = order[:n_pairs]
    tsv.write_pairs(root / "candidates.tsv", [pairs[k] for k in order])
    return root


def job_for(root: Path, work: str, shards: int, workers: int, batch: int = 128, **kw) -> ScoringJob:
    root = Path(root)
    return ScoringJob(str(root / work), str(root / "candidates.tsv"), str(root / "m.model"),
                      str(root / "corpus.tsv"), str(root / "queries.tsv"), str(root / "vocab.txt"),
                      shard_count=shards, worker_count=workers, batch_size=batch, **kw)
