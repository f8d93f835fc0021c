"""Sharded scoring farm coordinated through marker files in a shared work directory.

Layout of a work directory::

    job.json                       scoring job description (absolute paths)
    manifest.tsv                   shard name and row count, one line per shard
    shard-00003-of-00008.tsv       query_id, item_id rows to score
    shard-00003-of-00008.claim     first claim: "<worker> <unix time>"
    shard-00003-of-00008.claim.1   re-claim after the previous claim went stale
    scores-00003-of-00008.tsv      scored rows, input order
    shard-00003-of-00008.stats     worker, seconds, rows (feeds the farm report)
    shard-00003-of-00008.done      zero-length completion marker
    shard-00003-of-00008.failed    corrupt shard; message inside
    scores.tsv                     merged output, sorted by (query_id, item_id)
    farm_report.tsv                shard, worker, seconds, rows

Every mutation is a create-exclusive or an atomic rename, so workers can run as
threads, local processes, or processes on other hosts mounting the directory.
A worker keeps its claim alive by touching the claim file once per batch; a
claim untouched for ``stale_timeout`` seconds may be taken over by creating the
next claim generation.
"""

from __future__ import annotations

import json
import logging
import multiprocessing
import os
import re
import socket
import subprocess
import sys
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import tsv
from .recall import CorpusItem
from .scorer import Model, load_model
from .wordpiece import MAX_SEQ_LEN, Vocab, compose_answer, encode_ids, load_vocab, tokens_to_ids, wordpiece_tokenize

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 128
DEFAULT_STALE_TIMEOUT = 600.0
MERGED_NAME = "scores.tsv"
REPORT_NAME = "farm_report.tsv"
_FARM_FILE_RE = re.compile(
    r"^(shard-\d{5}-of-\d{5}\.(tsv|claim(\.\d+)?|done|failed|stats)|scores-\d{5}-of-\d{5}\.tsv|"
    r"manifest\.tsv|job\.json|scores\.tsv|farm_report\.tsv|\..*\.tmp)$"
)


class FarmError(RuntimeError):
    pass


class MergeError(FarmError):
    pass


class ShardCorruptError(ValueError):
    pass


@dataclass
class ScoringJob:
    work_dir: str
    candidates_path: str
    model_path: str
    corpus_path: str
    queries_path: str
    vocab_path: str
    shard_count: int = 8
    worker_count: int = 8
    batch_size: int = DEFAULT_BATCH_SIZE
    max_seq_len: int = MAX_SEQ_LEN
    model_name: str = ""
    use_features: bool = False
    lowercase: bool = True
    stale_timeout: float = DEFAULT_STALE_TIMEOUT

    def __post_init__(self):
        if self.shard_count < 1 or self.worker_count < 1 or self.batch_size < 1:
            raise ValueError("shard_count, worker_count and batch_size must all be >= 1")
        if not self.model_name:
            self.model_name = Path(self.model_path).stem

    def absolute(self) -> "ScoringJob":
        d = asdict(self)
        for k in ("work_dir", "candidates_path", "model_path", "corpus_path", "queries_path", "vocab_path"):
            d[k] = str(Path(d[k]).resolve())
        return ScoringJob(**d)

    def save(self, path: Path) -> None:
        tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
        tmp.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: Path) -> "ScoringJob":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


# -- sharding ----------------------------------------------------------------


def shard_name(k: int, n: int) -> str:
    return f"shard-{k:05d}-of-{n:05d}"


def scores_name(name: str) -> str:
    return "scores-" + name[len("shard-") :] + ".tsv"


def balanced_sizes(total: int, n: int) -> list[int]:
    base, extra = divmod(total, n)
    return [base + 1 if k < extra else base for k in range(n)]


def shard_manifest(candidates: Iterable[tuple[str, str]], n: int, work_dir: str | Path) -> list[Path]:
    """Split pairs into ``n`` contiguous shards whose sizes differ by at most one."""
    if n < 1:
        raise ValueError(f"shard count must be >= 1, got {n}")
    pairs = list(candidates)
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    manifest = []
    start = 0
    for k, size in enumerate(balanced_sizes(len(pairs), n)):
        name = shard_name(k, n)
        path = work_dir / f"{name}.tsv"
        tsv.write_pairs(path, pairs[start : start + size])
        start += size
        paths.append(path)
        manifest.append([name, str(size)])
    tsv.write_rows(work_dir / "manifest.tsv", ("shard", "rows"), manifest)
    return paths


def read_manifest(work_dir: str | Path) -> list[tuple[str, int]]:
    path = Path(work_dir) / "manifest.tsv"
    if not path.exists():
        raise FarmError(f"{work_dir}: no manifest.tsv; shard the candidates first")
    rows = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            name, count = line.rstrip("\n").split("\t")
            rows.append((name, int(count)))
    return rows


# -- scoring -----------------------------------------------------------------


class ScoringContext:
    """Everything a worker needs to score pairs; immutable once loaded."""

    def __init__(self, model: Model, vocab: Vocab, corpus: dict[str, CorpusItem], queries: dict[str, str],
                 max_seq_len: int = MAX_SEQ_LEN, model_name: str = "model", use_features: bool = False):
        self.model = model
        self.vocab = vocab
        self.corpus = corpus
        self.queries = queries
        self.max_seq_len = max_seq_len
        self.model_name = model_name
        self.use_features = use_features
        self._query_ids: dict[str, list[int]] = {}
        self._item_ids: dict[str, list[int]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_job(cls, job: ScoringJob) -> "ScoringContext":
        return cls(
            load_model(job.model_path),
            load_vocab(job.vocab_path, lowercase=job.lowercase),
            {it.item_id: it for it in tsv.read_corpus(job.corpus_path)},
            dict(tsv.read_queries(job.queries_path)),
            job.max_seq_len,
            job.model_name,
            job.use_features,
        )

    def warm_up(self) -> None:
        """Run one tiny batch so compiled kernels are loaded before workers fork."""
        seq = encode_ids([], [], self.vocab, max(self.max_seq_len, 5))
        self.model.score_batch(seq.ids[None], seq.mask[None], seq.segments[None])

    def answer_text(self, item: CorpusItem) -> str:
        if self.use_features:
            return compose_answer(item.title, item.price, item.breadcrumb)
        return item.title

    def _token_ids(self, cache: dict, key: str, text: str) -> list[int]:
        ids = cache.get(key)
        if ids is None:
            ids = tokens_to_ids(wordpiece_tokenize(text, self.vocab), self.vocab)
            with self._lock:
                cache[key] = ids
        return ids

    def score_pairs(self, pairs: list[tuple[str, str]]) -> list[float | None]:
        """Relevance probability per pair; None for pairs naming an unknown query or item."""
        out: list[float | None] = [None] * len(pairs)
        rows = []
        seqs = []
        for i, (qid, iid) in enumerate(pairs):
            query, item = self.queries.get(qid), self.corpus.get(iid)
            if query is None or item is None:
                continue
            q = self._token_ids(self._query_ids, qid, query)
            a = self._token_ids(self._item_ids, iid, self.answer_text(item))
            seqs.append(encode_ids(q, a, self.vocab, self.max_seq_len))
            rows.append(i)
        if seqs:
            ids = np.stack([s.ids for s in seqs])
            mask = np.stack([s.mask for s in seqs])
            seg = np.stack([s.segments for s in seqs])
            for i, p in zip(rows, self.model.score_batch(ids, mask, seg)):
                out[i] = float(p)
        return out


def _read_shard(path: Path) -> list[tuple[str, str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise ShardCorruptError(f"{path.name}: unreadable ({exc})") from None
    if lines[0] != "\t".join(tsv.PAIRS_HEADER):
        raise ShardCorruptError(f"{path.name}: bad header {lines[0]!r}")
    if lines[-1] != "":
        raise ShardCorruptError(f"{path.name}: truncated final line")
    pairs = []
    for lineno, line in enumerate(lines[1:-1], 2):
        f = line.split("\t")
        if len(f) != 2 or not f[0] or not f[1]:
            raise ShardCorruptError(f"{path.name}:{lineno}: expected query_id<TAB>item_id")
        pairs.append((f[0], f[1]))
    return pairs


def score_shard(shard_path: str | Path, ctx: ScoringContext, batch_size: int = DEFAULT_BATCH_SIZE,
                out_path: str | Path | None = None, heartbeat: Callable[[], None] | None = None) -> Path:
    """Score a shard file in batches, writing ``scores-*.tsv`` next to it in input order."""
    shard_path = Path(shard_path)
    pairs = _read_shard(shard_path)
    if out_path is None:
        out_path = shard_path.with_name(scores_name(shard_path.stem))

    def rows():
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start : start + batch_size]
            for (qid, iid), score in zip(batch, ctx.score_pairs(batch)):
                yield [qid, iid, "ERR" if score is None else tsv.format_score(score), ctx.model_name]
            if heartbeat is not None:
                heartbeat()

    tsv.write_rows(out_path, tsv.SCORES_HEADER, rows())
    return Path(out_path)


# -- claim protocol ----------------------------------------------------------


def _claim_paths(work_dir: Path, name: str) -> list[tuple[int, Path]]:
    found = []
    for p in work_dir.glob(f"{name}.claim*"):
        suffix = p.name[len(name) + len(".claim") :]
        if suffix == "":
            found.append((0, p))
        elif suffix[1:].isdigit():
            found.append((int(suffix[1:]), p))
    return sorted(found)


def _create_exclusive(path: Path, content: str) -> bool:
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    except FileExistsError:
        return False
    with os.fdopen(fd, "w") as fh:
        fh.write(content)
    return True


def try_claim(work_dir: Path, name: str, worker_id: str, stale_timeout: float) -> Path | None:
    """Take ownership of a shard; returns the claim file on success.

    Only one claimant can create a given claim generation, so at most one
    worker owns each generation. A newer generation is allowed only once the
    newest existing claim file has not been touched for ``stale_timeout``.
    """
    if (work_dir / f"{name}.done").exists() or (work_dir / f"{name}.failed").exists():
        return None
    claims = _claim_paths(work_dir, name)
    if claims:
        gen, newest = claims[-1]
        try:
            age = time.time() - newest.stat().st_mtime
        except FileNotFoundError:
            return None
        if age < stale_timeout:
            return None
        path = work_dir / f"{name}.claim.{gen + 1}"
        log.info("%s: claim %s is stale (%.1fs), re-claiming", worker_id, newest.name, age)
    else:
        path = work_dir / f"{name}.claim"
    if _create_exclusive(path, f"{worker_id} {time.time():.6f}\n"):
        return path
    return None


def _touch(path: Path) -> None:
    try:
        os.utime(path)
    except FileNotFoundError:
        pass


def default_worker_id() -> str:
    return f"{socket.gethostname()}:{os.getpid()}:{threading.get_ident() % 100000}"


def worker_loop(work_dir: str | Path, worker_id: str | None = None, poll_interval: float = 0.2,
                ctx: ScoringContext | None = None) -> int:
    """Claim and score shards until every shard is done or failed; returns shards scored."""
    work_dir = Path(work_dir)
    worker_id = worker_id or default_worker_id()
    job = ScoringJob.load(work_dir / "job.json")
    names = [name for name, _ in read_manifest(work_dir)]
    scored = 0
    start_at = sum(map(ord, worker_id)) % max(len(names), 1)
    names = names[start_at:] + names[:start_at]
    while True:
        pending = [n for n in names
                   if not (work_dir / f"{n}.done").exists() and not (work_dir / f"{n}.failed").exists()]
        if not pending:
            return scored
        progressed = False
        for name in pending:
            claim = try_claim(work_dir, name, worker_id, job.stale_timeout)
            if claim is None:
                continue
            if ctx is None:
                ctx = ScoringContext.from_job(job)
            t0 = time.perf_counter()
            try:
                out = score_shard(work_dir / f"{name}.tsv", ctx, job.batch_size, heartbeat=lambda: _touch(claim))
            except ShardCorruptError as exc:
                log.error("%s: %s", worker_id, exc)
                _create_exclusive(work_dir / f"{name}.failed", f"{exc}\n")
                progressed = True
                break
            rows = sum(1 for _ in open(out, encoding="utf-8")) - 1
            tsv.write_rows(work_dir / f"{name}.stats", ("worker", "seconds", "rows"),
                           [[worker_id, f"{time.perf_counter() - t0:.3f}", str(rows)]])
            _create_exclusive(work_dir / f"{name}.done", "")
            scored += 1
            progressed = True
            break
        if not progressed:
            time.sleep(poll_interval)


# -- merge -------------------------------------------------------------------


def merge_shards(work_dir: str | Path, out_path: str | Path | None = None) -> Path:
    """Concatenate shard score files, verify counts and uniqueness, sort by pair."""
    work_dir = Path(work_dir)
    manifest = read_manifest(work_dir)
    missing = [name for name, _ in manifest if not (work_dir / f"{name}.done").exists()]
    if missing:
        raise MergeError(f"missing done-markers for {len(missing)} shard(s), first: {missing[0]}")
    seen: dict[tuple[str, str], str] = {}
    keyed = []
    for name, expected in manifest:
        path = work_dir / scores_name(name)
        with open(path, encoding="utf-8") as fh:
            body = fh.read().split("\n")[1:-1]
        if len(body) != expected:
            raise MergeError(f"{name}: {len(body)} scored rows, manifest says {expected}")
        for line in body:
            qid, iid, _ = line.split("\t", 2)
            key = (qid, iid)
            if key in seen:
                raise MergeError(f"{name}: duplicate pair ({qid}, {iid}) also in {seen[key]}")
            seen[key] = name
            keyed.append((key, line))
    keyed.sort(key=lambda x: x[0])
    out_path = Path(out_path) if out_path else work_dir / MERGED_NAME
    tsv.write_lines(out_path, tsv.SCORES_HEADER, (line for _, line in keyed))
    return out_path


def farm_report(work_dir: str | Path) -> list[tuple[str, str, float, int]]:
    work_dir = Path(work_dir)
    rows = []
    for name, _ in read_manifest(work_dir):
        stats = work_dir / f"{name}.stats"
        if stats.exists():
            worker, seconds, count = stats.read_text(encoding="utf-8").split("\n")[1].split("\t")
            rows.append((name, worker, float(seconds), int(count)))
    return rows


def write_farm_report(work_dir: str | Path, path: str | Path | None = None) -> Path:
    path = Path(path) if path else Path(work_dir) / REPORT_NAME
    tsv.write_rows(path, ("shard", "worker", "seconds", "rows"),
                   ([n, w, f"{s:.3f}", str(r)] for n, w, s, r in farm_report(work_dir)))
    return path


# -- farm driver -------------------------------------------------------------


def wipe_work_dir(work_dir: str | Path) -> None:
    """Remove farm-owned files only; anything else in the directory is left alone."""
    work_dir = Path(work_dir)
    if not work_dir.exists():
        return
    for p in work_dir.iterdir():
        if p.is_file() and _FARM_FILE_RE.match(p.name):
            p.unlink()


def prepare_farm(job: ScoringJob, fresh: bool = False) -> ScoringJob:
    """Shard the candidates and write job.json, or validate an existing run for resume."""
    job = job.absolute()
    work_dir = Path(job.work_dir)
    if fresh:
        wipe_work_dir(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    job_file = work_dir / "job.json"
    if job_file.exists():
        previous = ScoringJob.load(job_file)
        if (previous.candidates_path, previous.model_path, previous.shard_count, previous.max_seq_len) != (
            job.candidates_path, job.model_path, job.shard_count, job.max_seq_len
        ):
            raise FarmError(f"{work_dir} holds a different job; rerun with --fresh")
        # worker-side settings may change between resumes
        job.save(job_file)
        return job
    shard_manifest(tsv.read_pairs(job.candidates_path), job.shard_count, work_dir)
    job.save(job_file)
    return job


def spawn_worker(work_dir: str | Path, worker_id: str, poll_interval: float = 0.2) -> subprocess.Popen:
    """Start a worker as a separate OS process (the same command works on another host)."""
    src = str(Path(__file__).resolve().parent.parent)
    env = dict(os.environ)
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    cmd = [sys.executable, "-m", "relevance_forge", "worker", "--work-dir", str(work_dir),
           "--worker-id", worker_id, "--poll-interval", str(poll_interval)]
    return subprocess.Popen(cmd, env=env, stdout=subprocess.DEVNULL)


@dataclass
class FarmResult:
    merged_path: Path
    report_path: Path
    report: list[tuple[str, str, float, int]]
    seconds: float
    scoring_seconds: float


def _forked_worker(work_dir: str, worker_id: str, poll_interval: float, ctx: ScoringContext) -> None:
    worker_loop(work_dir, worker_id, poll_interval, ctx)


def run_farm(job: ScoringJob, fresh: bool = False, mode: str = "process", poll_interval: float = 0.2) -> FarmResult:
    """Shard, score with ``worker_count`` concurrent workers, and merge.

    ``mode`` is "process" (one OS process per worker) or "thread" (in-process).
    Where the platform can fork, process workers are forked from this process
    after the scoring context is loaded and warmed, so they skip interpreter
    start-up and kernel loading; elsewhere each worker is a fresh interpreter
    running the ``worker`` subcommand.
    """
    t0 = time.perf_counter()
    job = prepare_farm(job, fresh=fresh)
    work_dir = Path(job.work_dir)
    t_scoring = time.perf_counter()
    if mode == "process":
        if "fork" in multiprocessing.get_all_start_methods():
            ctx = ScoringContext.from_job(job)
            ctx.warm_up()
            fork = multiprocessing.get_context("fork")
            procs = [fork.Process(target=_forked_worker, args=(str(work_dir), f"w{i:02d}", poll_interval, ctx))
                     for i in range(job.worker_count)]
            for p in procs:
                p.start()
            for p in procs:
                p.join()
            codes = [p.exitcode for p in procs]
        else:
            codes = [p.wait() for p in [spawn_worker(work_dir, f"w{i:02d}", poll_interval)
                                        for i in range(job.worker_count)]]
        if any(codes):
            log.warning("worker exit codes: %s", codes)
    elif mode == "thread":
        ctx = ScoringContext.from_job(job)
        errors: list[BaseException] = []

        def run(i):
            try:
                worker_loop(work_dir, f"t{i:02d}", poll_interval, ctx)
            except BaseException as exc:  # surfaced after join
                errors.append(exc)

        threads = [threading.Thread(target=run, args=(i,)) for i in range(job.worker_count)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise FarmError(f"worker thread failed: {errors[0]!r}") from errors[0]
    else:
        raise ValueError(f"unknown worker mode {mode!r}")
    t_scoring = time.perf_counter() - t_scoring
    failed = sorted(p.name for p in work_dir.glob("shard-*.failed"))
    if failed:
        raise FarmError(f"{len(failed)} shard(s) failed, first: {failed[0]}")
    merged = merge_shards(work_dir)
    report_path = write_farm_report(work_dir)
    return FarmResult(merged, report_path, farm_report(work_dir), time.perf_counter() - t0, t_scoring)
