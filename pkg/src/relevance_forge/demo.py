"""End-to-end two-stage run on a seeded synthetic corpus."""

from __future__ import annotations

from pathlib import Path

from . import synth, tsv
from .ensemble import ScoreTable, ensemble_mean
from .evaluation import evaluate_at, sweep_threshold
from .orchestrator import ScoringJob, run_farm
from .recall import build_index, recall_all
from .scorer import EncoderParams, LabeledPair, Model, TrainConfig, save_model, split_per_query, train_head
from .textprep import PrepConfig, StopwordSet, SynonymDict
from .wordpiece import encode_pair, save_vocab

SEED_OFFSETS = {"synth": 0, "split": 1, "encoder": 2, "train": 3}


def run_demo(seed: int = 7, n_items: int = 1000, n_queries: int = 10, work_dir: Path = Path("demo-work"),
             shards: int = 4, workers: int = 2, mode: str = "thread") -> str:
    """Returns the printable report; contains no timings, so it is byte-reproducible."""
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    out = []

    data = synth.generate(n_items, n_queries, seed + SEED_OFFSETS["synth"])
    corpus = data.corpus
    tsv.write_corpus(work_dir / "corpus.tsv", corpus)
    tsv.write_queries(work_dir / "queries.tsv", data.queries)
    vocab = synth.build_vocab([it.title for it in corpus] + [t for _, t in data.queries])
    save_vocab(vocab, work_dir / "vocab.txt")

    # stage one
    cfg = PrepConfig()
    stops = StopwordSet.default()
    syn = SynonymDict.from_pairs(synth.synonym_pairs())
    index = build_index(corpus, cfg, stops)
    cands = recall_all(data.queries, index, cfg, stops, syn)
    tsv.write_pairs(work_dir / "candidates.tsv", cands.pairs)
    out.append("== stage one: term-matching recall")
    out += cands.stats_lines()

    # labels for every recalled pair, split 90/10 within each query
    labels = data.labels(cands.pairs)
    tsv.write_truth(work_dir / "truth.tsv", labels)
    texts = dict(data.queries)
    titles = {it.item_id: it.title for it in corpus}
    pairs = [LabeledPair(q, i, encode_pair(texts[q], titles[i], vocab), y) for (q, i), y in sorted(labels.items())]
    train, evals = split_per_query(pairs, 0.1, seed + SEED_OFFSETS["split"])
    out.append(f"labelled_pairs\t{len(pairs)}\ttrain\t{len(train)}\teval\t{len(evals)}")

    # stage two: two heads, farm scoring, ensemble
    enc = EncoderParams(64, seed + SEED_OFFSETS["encoder"], 4096)
    tables = []
    out.append("== stage two: heads")
    for kind in ("logistic", "mlp"):
        tc = TrainConfig(learning_rate=0.5, batch_size=32, max_epochs=60, patience=8,
                         seed=seed + SEED_OFFSETS["train"], hidden=32)
        result = train_head(train, evals, enc, tc, kind)
        model_path = work_dir / f"{kind}.model"
        save_model(Model(result.head, enc), model_path)
        auc = result.log[result.best_epoch - 1][2]
        out.append(f"{kind}\tepochs\t{len(result.log)}\tbest_epoch\t{result.best_epoch}\teval_auc\t{auc:.4f}")
        job = ScoringJob(str(work_dir / f"farm-{kind}"), str(work_dir / "candidates.tsv"), str(model_path),
                         str(work_dir / "corpus.tsv"), str(work_dir / "queries.tsv"), str(work_dir / "vocab.txt"),
                         shard_count=shards, worker_count=workers, model_name=kind)
        farm = run_farm(job, fresh=True, mode=mode)
        tables.append(ScoreTable.load(farm.merged_path))
    ens = ensemble_mean(tables)
    ens.save(work_dir / "ensemble.tsv")

    train_keys = {(p.query_id, p.item_id) for p in train}
    eval_keys = {(p.query_id, p.item_id) for p in evals}
    positives = {k for k, y in labels.items() if y == 1}
    out.append("== evaluation (threshold chosen on train pairs, reported on held-out pairs)")
    for table in tables + [ens]:
        thr, _ = sweep_threshold(table, positives & train_keys, train_keys, "overall")
        report = evaluate_at(table, positives & eval_keys, thr, eval_keys)
        f1 = "absent" if report.f1 is None else f"{report.f1:.4f}"
        out.append(f"{table.model_name}\tthreshold\t{thr:.4f}\tf1\t{f1}\tmean_per_query_f1\t{report.mean_per_query_f1:.4f}")
    out.append("== ensemble report")
    out.append(report.text().rstrip("\n"))
    return "\n".join(out) + "\n"
