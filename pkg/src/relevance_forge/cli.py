"""Command-line entry point: ``relevance-forge <subcommand> [flags]``.

Settings can also come from a plain-text config file (``--config FILE``) of
``key = value`` lines whose keys are flag names (dashes or underscores).
Flags given on the command line win over the file.

Seeds: the seeded subcommands (split, train, demo) take ``--seed``; each module derives its own seed as
``seed + SEED_OFFSETS[module]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import tsv
from .demo import SEED_OFFSETS, run_demo
from .ensemble import EnsembleError, ScoreTable, ensemble_mean
from .evaluation import EvalContractError, evaluate_at, sweep_threshold
from .orchestrator import DEFAULT_BATCH_SIZE, DEFAULT_STALE_TIMEOUT, FarmError, ScoringJob, run_farm, worker_loop
from .recall import IndexBuildError, InvertedIndex, QueryInputError, build_index, recall_all
from .scorer import (
    ContractError, EncoderParams, LabeledPair, Model, ModelFormatError, TrainConfig, TrainingError,
    save_model, split_per_query, train_head,
)
from .textprep import PrepConfig, StopwordSet, SynonymDict
from .wordpiece import EncodeConfigError, VocabError, compose_answer, encode_pair, load_vocab, stream_encode

WORKDIR_ENV = "RELEVANCE_FORGE_WORKDIR"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (
    OSError, UnicodeDecodeError, ValueError, VocabError, EncodeConfigError, IndexBuildError,
    QueryInputError, ModelFormatError, TrainingError, ContractError, EnsembleError, EvalContractError, FarmError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path: str | Path) -> dict[str, str]:
    conf = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            conf[key.strip().replace("-", "_")] = value.strip()
    return conf


# -- shared flag groups ------------------------------------------------------


def _add_prep(p):
    p.add_argument("--stopwords", help="stopword file (default: built-in English list)")
    p.add_argument("--synonyms", help="synonym TSV: term<TAB>expansion phrase (default: none)")
    p.add_argument("--no-stem", dest="stem", action="store_false", help="disable stemming (default: on)")
    p.add_argument("--no-stopwords", dest="use_stopwords", action="store_false",
                   help="disable stopword removal (default: on)")
    p.add_argument("--no-lowercase", dest="lowercase", action="store_false", help="keep case (default: lowercase)")


def _add_text_inputs(p, vocab=True):
    p.add_argument("--corpus", required=True, help="corpus TSV with header (default: none)")
    p.add_argument("--queries", required=True, help="queries TSV query_id<TAB>query_text (default: none)")
    if vocab:
        p.add_argument("--vocab", required=True, help="WordPiece vocab file (default: none)")
        p.add_argument("--max-seq-len", type=int, default=64, help="encoded length (default: %(default)s)")
        p.add_argument("--use-features", action="store_true",
                       help="append price and breadcrumb to titles with '|' (default: off)")
        p.add_argument("--no-lowercase", dest="lowercase", action="store_false",
                       help="keep case before WordPiece (default: lowercase)")


def _prep(args) -> tuple[PrepConfig, StopwordSet, SynonymDict | None]:
    cfg = PrepConfig(args.lowercase, args.stem, args.use_stopwords, True)
    stops = StopwordSet.load(args.stopwords) if args.stopwords else StopwordSet.default()
    syn = SynonymDict.load(args.synonyms) if args.synonyms else None
    return cfg, stops, syn


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relevance-forge", description="Two-stage query/item relevance pipeline.")
    parser.add_argument("--config", help="key = value config file; flags override it (default: none)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("index", help="build an inverted index over corpus titles")
    p.add_argument("--corpus", required=True, help="corpus TSV with header (default: none)")
    p.add_argument("--out", required=True, help="index dump (JSON) to write (default: none)")
    _add_prep(p)

    p = sub.add_parser("recall", help="recall candidate pairs by term overlap")
    p.add_argument("--corpus", help="corpus TSV; used when --index is absent (default: none)")
    p.add_argument("--index", help="index dump from the index subcommand (default: none)")
    p.add_argument("--queries", required=True, help="queries TSV (default: none)")
    p.add_argument("--out", required=True, help="candidates TSV to write (default: none)")
    _add_prep(p)

    p = sub.add_parser("encode", help="stream-encode query<TAB>answer lines from stdin")
    p.add_argument("--vocab", required=True, help="WordPiece vocab file (default: none)")
    p.add_argument("--max-seq-len", type=int, default=64, help="encoded length (default: %(default)s)")
    p.add_argument("--no-lowercase", dest="lowercase", action="store_false", help="keep case (default: lowercase)")

    p = sub.add_parser("split", help="per-query train/eval split of a labels file")
    p.add_argument("--labels", required=True, help="labels TSV query_id<TAB>item_id<TAB>label (default: none)")
    p.add_argument("--eval-fraction", type=float, default=0.1, help="held-out share per query (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="base seed (default: %(default)s)")
    p.add_argument("--train-out", required=True, help="train labels TSV to write (default: none)")
    p.add_argument("--eval-out", required=True, help="eval labels TSV to write (default: none)")

    p = sub.add_parser("train", help="train a logistic or MLP relevance head")
    p.add_argument("--train", required=True, help="train labels TSV (default: none)")
    p.add_argument("--eval", required=True, help="eval labels TSV (default: none)")
    _add_text_inputs(p)
    p.add_argument("--head", choices=["logistic", "mlp"], default="logistic", help="head kind (default: %(default)s)")
    p.add_argument("--hidden", type=int, default=32, help="MLP hidden units (default: %(default)s)")
    p.add_argument("--dim", type=int, default=64, help="pooled vector width (default: %(default)s)")
    p.add_argument("--table-size", type=int, default=4096, help="hashed embedding rows (default: %(default)s)")
    p.add_argument("--lr", type=float, default=0.5, help="learning rate (default: %(default)s)")
    p.add_argument("--batch-size", type=int, default=32, help="mini-batch size (default: %(default)s)")
    p.add_argument("--epochs", type=int, default=50, help="maximum epochs (default: %(default)s)")
    p.add_argument("--patience", type=int, default=5, help="epochs without AUC gain before stop (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="base seed (default: %(default)s)")
    p.add_argument("--out", required=True, help="model file to write (default: none)")
    p.add_argument("--log", help="training log TSV to write (default: none)")

    p = sub.add_parser("score", help="score candidates with a sharded worker farm")
    p.add_argument("--candidates", required=True, help="candidates TSV (default: none)")
    p.add_argument("--model", required=True, help="model file (default: none)")
    _add_text_inputs(p)
    p.add_argument("--work-dir", help=f"shared work directory (default: ${WORKDIR_ENV})")
    p.add_argument("--shards", type=int, default=8, help="number of shards (default: %(default)s)")
    p.add_argument("--workers", type=int, default=8, help="concurrent workers (default: %(default)s)")
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE, help="scoring batch (default: %(default)s)")
    p.add_argument("--model-name", default="", help="name written in score files (default: model file stem)")
    p.add_argument("--stale-timeout", type=float, default=DEFAULT_STALE_TIMEOUT,
                   help="seconds before an untouched claim may be taken over (default: %(default)s)")
    p.add_argument("--mode", choices=["process", "thread"], default="process",
                   help="worker execution units (default: %(default)s)")
    p.add_argument("--fresh", action="store_true", help="wipe farm files in the work dir first (default: resume)")
    p.add_argument("--out", help="copy of the merged score file (default: <work-dir>/scores.tsv)")

    p = sub.add_parser("worker", help="join a farm: claim and score shards in a work directory")
    p.add_argument("--work-dir", help=f"shared work directory (default: ${WORKDIR_ENV})")
    p.add_argument("--worker-id", help="identity recorded in claims (default: host:pid)")
    p.add_argument("--poll-interval", type=float, default=0.2, help="seconds between scans (default: %(default)s)")

    p = sub.add_parser("ensemble", help="average score files")
    p.add_argument("scores", nargs="+", help="score TSV files covering identical pairs")
    p.add_argument("--out", required=True, help="ensembled score TSV to write (default: none)")

    p = sub.add_parser("eval", help="precision/recall/F1 at a threshold")
    p.add_argument("--scores", required=True, help="score TSV (default: none)")
    p.add_argument("--truth", required=True, help="truth TSV; its pairs form the judged universe (default: none)")
    p.add_argument("--threshold", type=float, default=0.5, help="positive when score >= threshold (default: %(default)s)")
    p.add_argument("--per-query-out", help="per-query F1 TSV to write (default: none)")

    p = sub.add_parser("sweep", help="choose the F1-maximizing threshold")
    p.add_argument("--scores", required=True, help="score TSV (default: none)")
    p.add_argument("--truth", required=True, help="truth TSV (default: none)")
    p.add_argument("--objective", choices=["overall", "per_query"], default="overall",
                   help="F1 flavour to maximize (default: %(default)s)")
    p.add_argument("--per-query-out", help="per-query F1 TSV to write (default: none)")

    p = sub.add_parser("demo", help="end-to-end run on a seeded synthetic corpus")
    p.add_argument("--seed", type=int, default=7, help="base seed (default: %(default)s)")
    p.add_argument("--items", type=int, default=1000, help="synthetic items (default: %(default)s)")
    p.add_argument("--n-queries", type=int, default=10, help="synthetic queries (default: %(default)s)")
    p.add_argument("--work-dir", help="directory for intermediate files (default: a temp dir)")
    p.add_argument("--shards", type=int, default=4, help="scoring shards (default: %(default)s)")
    p.add_argument("--workers", type=int, default=2, help="scoring workers (default: %(default)s)")
    p.add_argument("--mode", choices=["process", "thread"], default="thread",
                   help="worker execution units (default: %(default)s)")
    return parser


# -- subcommand bodies -------------------------------------------------------


def _work_dir(args) -> str:
    wd = args.work_dir or os.environ.get(WORKDIR_ENV)
    if not wd:
        raise UsageError(f"--work-dir not given and ${WORKDIR_ENV} is unset")
    return wd


def _labeled_pairs(labels, corpus, queries, vocab, max_seq_len, use_features):
    items = {it.item_id: it for it in corpus}
    qtext = dict(queries)
    out = []
    for (qid, iid), label in labels.items():
        if qid not in qtext or iid not in items:
            raise tsv.DataFormatError(f"labelled pair ({qid}, {iid}) names an unknown query or item")
        it = items[iid]
        answer = compose_answer(it.title, it.price, it.breadcrumb) if use_features else it.title
        out.append(LabeledPair(qid, iid, encode_pair(qtext[qid], answer, vocab, max_seq_len), label))
    return out


def cmd_index(args, out):
    cfg, stops, _ = _prep(args)
    index = build_index(tsv.read_corpus(args.corpus), cfg, stops)
    index.dump(args.out)
    print(f"items\t{index.doc_count}\nterms\t{len(index.postings)}", file=out)


def cmd_recall(args, out):
    cfg, stops, syn = _prep(args)
    if args.index:
        index = InvertedIndex.load(args.index)
    elif args.corpus:
        index = build_index(tsv.read_corpus(args.corpus), cfg, stops)
    else:
        raise UsageError("recall needs --index or --corpus")
    cands = recall_all(tsv.read_queries(args.queries), index, cfg, stops, syn)
    tsv.write_pairs(args.out, cands.pairs)
    print("\n".join(cands.stats_lines()), file=out)


def cmd_encode(args, out):
    vocab = load_vocab(args.vocab, lowercase=args.lowercase)
    stream_encode(sys.stdin, out, vocab, args.max_seq_len)


def cmd_split(args, out):
    labels = tsv.read_truth(args.labels)

    class Row:
        __slots__ = ("query_id", "item_id", "label")

        def __init__(self, q, i, label):
            self.query_id, self.item_id, self.label = q, i, label

    rows = [Row(q, i, label) for (q, i), label in labels.items()]
    train, evals = split_per_query(rows, args.eval_fraction, args.seed + SEED_OFFSETS["split"])
    tsv.write_truth(args.train_out, {(r.query_id, r.item_id): r.label for r in train})
    tsv.write_truth(args.eval_out, {(r.query_id, r.item_id): r.label for r in evals})
    print(f"train\t{len(train)}\neval\t{len(evals)}", file=out)


def cmd_train(args, out):
    vocab = load_vocab(args.vocab, lowercase=args.lowercase)
    corpus = tsv.read_corpus(args.corpus)
    queries = tsv.read_queries(args.queries)
    train = _labeled_pairs(tsv.read_truth(args.train), corpus, queries, vocab, args.max_seq_len, args.use_features)
    evals = _labeled_pairs(tsv.read_truth(args.eval), corpus, queries, vocab, args.max_seq_len, args.use_features)
    enc = EncoderParams(args.dim, args.seed + SEED_OFFSETS["encoder"], args.table_size)
    cfg = TrainConfig(args.lr, args.batch_size, args.epochs, patience=args.patience,
                      seed=args.seed + SEED_OFFSETS["train"], hidden=args.hidden)
    result = train_head(train, evals, enc, cfg, args.head)
    save_model(Model(result.head, enc), args.out)
    if args.log:
        Path(args.log).write_text("\n".join(result.log_lines()) + "\n", encoding="utf-8")
    best = result.log[result.best_epoch - 1] if result.best_epoch else result.log[-1]
    print(f"epochs\t{len(result.log)}\nbest_epoch\t{result.best_epoch}\neval_auc\t{best[2]:.6f}", file=out)


def cmd_score(args, out):
    job = ScoringJob(
        work_dir=_work_dir(args), candidates_path=args.candidates, model_path=args.model,
        corpus_path=args.corpus, queries_path=args.queries, vocab_path=args.vocab,
        shard_count=args.shards, worker_count=args.workers, batch_size=args.batch_size,
        max_seq_len=args.max_seq_len, model_name=args.model_name, use_features=args.use_features,
        lowercase=args.lowercase, stale_timeout=args.stale_timeout,
    )
    result = run_farm(job, fresh=args.fresh, mode=args.mode)
    if args.out:
        Path(args.out).write_bytes(result.merged_path.read_bytes())
    rows = sum(r[3] for r in result.report)
    print(f"merged\t{result.merged_path}\nrows\t{rows}\nreport\t{result.report_path}", file=out)


def cmd_worker(args, out):
    n = worker_loop(_work_dir(args), args.worker_id, args.poll_interval)
    print(f"shards_scored\t{n}", file=out)


def cmd_ensemble(args, out):
    table = ensemble_mean([ScoreTable.load(p) for p in args.scores])
    n = table.save(args.out)
    print(f"pairs\t{n}\nmodel\t{table.model_name}", file=out)


def _truth_sets(path):
    labels = tsv.read_truth(path)
    return {p for p, label in labels.items() if label == 1}, set(labels)


def _load_scores_for_eval(path) -> dict:
    rows = {}
    for qid, iid, score, _ in tsv.read_scores(path):
        if score is not None:
            rows[(qid, iid)] = score
    return rows


def cmd_eval(args, out):
    truth, universe = _truth_sets(args.truth)
    report = evaluate_at(_load_scores_for_eval(args.scores), truth, args.threshold, universe)
    out.write(report.text())
    if args.per_query_out:
        Path(args.per_query_out).write_text(report.per_query_tsv(), encoding="utf-8")


def cmd_sweep(args, out):
    truth, universe = _truth_sets(args.truth)
    scores = _load_scores_for_eval(args.scores)
    # judged pairs without a score were never recalled; they count as negatives
    for p in universe - scores.keys():
        scores[p] = 0.0
    _, report = sweep_threshold(scores, truth, universe, args.objective)
    out.write(report.text())
    if args.per_query_out:
        Path(args.per_query_out).write_text(report.per_query_tsv(), encoding="utf-8")


def cmd_demo(args, out):
    if args.work_dir:
        out.write(run_demo(args.seed, args.items, args.n_queries, Path(args.work_dir),
                           args.shards, args.workers, args.mode))
    else:
        with tempfile.TemporaryDirectory(prefix="relevance-forge-demo-") as tmp:
            out.write(run_demo(args.seed, args.items, args.n_queries, Path(tmp),
                               args.shards, args.workers, args.mode))


COMMANDS = {
    "index": cmd_index, "recall": cmd_recall, "encode": cmd_encode, "split": cmd_split, "train": cmd_train,
    "score": cmd_score, "worker": cmd_worker, "ensemble": cmd_ensemble, "eval": cmd_eval, "sweep": cmd_sweep,
    "demo": cmd_demo,
}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    conf = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    used = set()
    for sp in subparsers.choices.values():
        defaults = {}
        for action in sp._actions:
            if action.dest in conf:
                raw = conf[action.dest]
                if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                    defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                elif action.type is not None:
                    defaults[action.dest] = action.type(raw)
                else:
                    defaults[action.dest] = raw
                action.required = False
                used.add(action.dest)
        sp.set_defaults(**defaults)
    unknown = set(conf) - used
    if unknown:
        raise UsageError(f"{known.config}: unknown key(s) {', '.join(sorted(unknown))}")


def main(argv: list[str] | None = None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = out or sys.stdout
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"relevance-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValueError as exc:
        print(f"relevance-forge: error: bad config value: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"relevance-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"relevance-forge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        print(f"relevance-forge: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())
