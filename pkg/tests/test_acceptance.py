"""Acceptance suite: one test per criterion, each under its wall-clock budget.

The terminal summary lists PASS/FAIL per criterion (see conftest.py).
"""

import os
import random
import re
import signal
import string
import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from farmkit import job_for, make_workspace
from relevance_forge import synth
from relevance_forge.ensemble import ScoreTable, ensemble_mean
from relevance_forge.evaluation import harmonic_f1, precision_recall_f1, sweep_threshold
from relevance_forge.orchestrator import merge_shards, prepare_farm, run_farm, spawn_worker
from relevance_forge.recall import CorpusItem, build_index, recall_all
from relevance_forge.scorer import (
    LogisticHead,
    MlpHead,
    TrainConfig,
    batch_auc,
    complement_softmax_grad,
    complement_softmax_loss,
    cross_entropy_and_grad,
    encode_batch,
    head_prob,
    train_head,
)
from relevance_forge.textprep import SynonymDict
from relevance_forge.wordpiece import SPECIAL_TOKENS, UNK, Vocab, encode_pair, split_words, wordpiece_tokenize
from test_evaluation import PUBLISHED_ROWS, divergence_case, random_instance
from test_recall import CFG, STOPS, brute_force_pairs
from test_scorer import numeric_grad, rel_err
from test_wordpiece import check_invariants
from toyset import ENCODER, toy_split


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds
        self.t0 = time.perf_counter()

    def check(self):
        elapsed = time.perf_counter() - self.t0
        assert elapsed < self.seconds, f"took {elapsed:.1f}s, budget {self.seconds}s"


@pytest.mark.criterion("published F1 consistency")
def test_published_f1_consistency():
    budget = Budget(1)
    for name, p, r, f1 in PUBLISHED_ROWS:
        assert abs(harmonic_f1(p, r) - f1) <= 1e-4, name
    budget.check()


def random_corpus(rng):
    words = list(synth.KINDS[:6]) + list(synth.ACCESSORIES[:6]) + ["the", "of", "usmc", "Running", "runs", "42"]
    n_items = int(rng.integers(0, 1001))
    corpus = [CorpusItem(f"i{k}", " ".join(rng.choice(words, size=rng.integers(0, 6)))) for k in range(n_items)]
    n_queries = int(rng.integers(1, 21))
    queries = [(f"q{k}", " ".join(rng.choice(words + ["marine"], size=rng.integers(0, 4)))) for k in range(n_queries)]
    return corpus, queries


@pytest.mark.criterion("recall oracle equivalence")
def test_recall_oracle_equivalence():
    budget = Budget(30)
    rng = np.random.default_rng(2024)
    syn = SynonymDict.from_pairs([("usmc", "united states marine corps"), ("guitar", "string instrument")])
    for trial in range(50):
        corpus, queries = random_corpus(rng)
        index = build_index(corpus, CFG, STOPS)
        got = recall_all(queries, index, CFG, STOPS, syn).pairs
        assert got == brute_force_pairs(queries, corpus, CFG, STOPS, syn), trial
    budget.check()


PIECE_ALPHABET = "abcde"


def tokenizer_vocab(rng):
    pieces = set()
    for _ in range(60):
        p = "".join(rng.choice(PIECE_ALPHABET) for _ in range(rng.randint(1, 4)))
        pieces.add(p if rng.random() < 0.5 else "##" + p)
    pieces |= {"a", "b", "##a", "##b", "##c"}
    return Vocab.from_tokens(list(SPECIAL_TOKENS) + sorted(pieces) + list(string.punctuation))


def random_text(rng):
    chars = PIECE_ALPHABET + "fABC  .,-!é"
    return "".join(rng.choice(chars) for _ in range(rng.randint(0, 40)))


@pytest.mark.criterion("tokenizer properties")
def test_tokenizer_properties():
    budget = Budget(30)
    rng = random.Random(7)
    vocab = tokenizer_vocab(rng)
    tokens = set(vocab.token_of)
    for _ in range(10_000):
        text = random_text(rng)
        for word in split_words(text):
            pieces = wordpiece_tokenize(word, vocab)
            expected = oracles.longest_prefix_pieces(word, tokens)
            if expected is None:
                assert pieces == [UNK]
            else:
                assert pieces == expected
                assert "".join(p.removeprefix("##") for p in pieces) == word
        other = random_text(rng)
        max_seq_len = rng.randint(5, 48)
        check_invariants(encode_pair(text, other, vocab, max_seq_len), vocab, max_seq_len)
    budget.check()


FARM_CONFIGS = [(1, 1, 1), (8, 4, 128), (16, 8, 32)]


@pytest.mark.slow
@pytest.mark.criterion("distributed determinism")
def test_distributed_determinism(tmp_path):
    budget = Budget(300)
    root = make_workspace(tmp_path, n_items=5000, n_queries=20, seed=11)
    outputs = {}
    for shards, workers, batch in FARM_CONFIGS:
        res = run_farm(job_for(root, f"w{shards}", shards, workers, batch), fresh=True, mode="process")
        outputs[(shards, workers, batch)] = res.merged_path.read_bytes()
    assert outputs[FARM_CONFIGS[0]].count(b"\n") == 100_001
    for cfg in FARM_CONFIGS[1:]:
        assert outputs[cfg] == outputs[FARM_CONFIGS[0]], cfg

    timings, scoring = {}, {}
    for workers in (1, 8):
        res = run_farm(job_for(root, f"speed{workers}", 8, workers, 128), fresh=True, mode="process")
        timings[workers], scoring[workers] = res.seconds, res.scoring_seconds
    speedup = timings[1] / timings[8]
    budget.check()
    assert speedup >= 3.0, (
        f"wall-clock speedup {speedup:.2f}x with 8 workers vs 1 ({timings[1]:.2f}s vs {timings[8]:.2f}s); "
        f"scoring phase alone {scoring[1] / scoring[8]:.2f}x; {len(os.sched_getaffinity(0))} usable CPU(s)")


def _wait_for(pred, timeout):
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if pred():
            return True
        time.sleep(0.005)
    return False


@pytest.mark.slow
@pytest.mark.criterion("chaos resilience")
def test_chaos_resilience(tmp_path):
    budget = Budget(120)
    root = make_workspace(tmp_path, n_items=2000, n_queries=20, seed=4, n_pairs=40_000)
    reference = run_farm(job_for(root, "ref", 1, 1, 128), fresh=True, mode="thread").merged_path.read_bytes()

    job = prepare_farm(job_for(root, "chaos", 4, 3, 64, stale_timeout=1.5), fresh=True)
    work = tmp_path / "chaos"
    victim = spawn_worker(work, "victim", 0.05)
    assert _wait_for(lambda: any(work.glob(".scores-*.tmp")), 60), "victim never started writing"
    victim.send_signal(signal.SIGKILL)
    victim.wait()
    claimed = [p for p in work.glob("shard-*.claim") if p.read_text().startswith("victim ")]
    assert len(claimed) == 1
    name = claimed[0].name.removesuffix(".claim")
    assert not (work / f"{name}.done").exists()

    rescuers = [spawn_worker(work, f"rescue{k}", 0.05) for k in range(job.worker_count - 1)]
    assert [p.wait(timeout=90) for p in rescuers] == [0] * len(rescuers)
    assert (work / f"{name}.claim.1").exists()
    assert merge_shards(work).read_bytes() == reference
    budget.check()


@pytest.mark.criterion("gradient fidelity")
def test_gradient_fidelity():
    budget = Budget(10)
    rng = np.random.default_rng(99)
    for _ in range(200):
        n, d, hid = (int(x) for x in rng.integers(1, 7, 3))
        H, y = rng.standard_normal((n, d)), rng.integers(0, 2, n)
        lg = LogisticHead(rng.standard_normal((2, d)))
        _, g = cross_entropy_and_grad(lg, H, y)
        assert rel_err(g["W"], numeric_grad(lambda: cross_entropy_and_grad(lg, H, y)[0], lg.W)) < 1e-5

        mlp = MlpHead(rng.standard_normal((hid, d)), rng.standard_normal(hid),
                      rng.standard_normal((2, hid)), rng.standard_normal(2))
        _, g = cross_entropy_and_grad(mlp, H, y)
        for pname, param in mlp.params().items():
            num = numeric_grad(lambda: cross_entropy_and_grad(mlp, H, y)[0], param)
            assert rel_err(g[pname], num) < 1e-5, pname

        c = int(rng.integers(2, 7))
        z = rng.standard_normal(c) * 2
        label = int(rng.integers(-c, c))
        num = numeric_grad(lambda: complement_softmax_loss(z, label), z)
        assert rel_err(complement_softmax_grad(z, label), num) < 1e-5
    budget.check()


@pytest.mark.criterion("training sanity")
def test_training_sanity():
    budget = Budget(30)
    train, evals = toy_split()
    cfg = TrainConfig(learning_rate=5.0, batch_size=32, max_epochs=50, patience=50, seed=1)
    result = train_head(train, evals, ENCODER, cfg, "logistic")
    H = encode_batch(np.stack([p.encoded.ids for p in evals]), np.stack([p.encoded.mask for p in evals]),
                     np.stack([p.encoded.segments for p in evals]), ENCODER)
    assert batch_auc(head_prob(H, result.head), [p.label for p in evals]) == 1.0
    assert result.best_epoch <= 50

    frozen = train_head(train, evals, ENCODER, TrainConfig(learning_rate=0.0, max_epochs=3, seed=1), "mlp")
    init = MlpHead.init(ENCODER.dim, 32, 1)
    for pname, p in init.params().items():
        assert np.array_equal(frozen.head.params()[pname], p)

    for kind in ("logistic", "mlp"):
        a = train_head(train, evals, ENCODER, TrainConfig(learning_rate=1.0, max_epochs=8, seed=6), kind)
        b = train_head(train, evals, ENCODER, TrainConfig(learning_rate=1.0, max_epochs=8, seed=6), kind)
        for pname in a.head.params():
            assert a.head.params()[pname].tobytes() == b.head.params()[pname].tobytes()
    budget.check()


@pytest.mark.criterion("metric suite")
def test_metric_suite():
    budget = Budget(10)
    pred, truth, uni = divergence_case()
    rep = precision_recall_f1(pred, truth, uni)
    assert rep.f1 == 200 / 201 and rep.mean_per_query_f1 == 0.5
    rng = random.Random(31)
    for _ in range(100):
        scores, positives = random_instance(rng, n=20)
        for kind in ("overall", "per_query"):
            thr, _ = sweep_threshold(scores, positives, objective=kind)
            want_t, want_v = oracles.best_threshold(scores, positives, kind)
            assert thr == want_t
            assert oracles.objective(scores, positives, thr, kind) == pytest.approx(want_v, abs=1e-12)
    budget.check()


@pytest.mark.criterion("ensemble properties")
def test_ensemble_properties():
    budget = Budget(5)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n_tables, n_keys = int(rng.integers(1, 6)), int(rng.integers(1, 10))
        keys = [(f"q{k % 3}", f"i{k}") for k in range(n_keys)]
        tables = [ScoreTable(dict(zip(keys, map(float, rng.random(n_keys)))), f"m{j}") for j in range(n_tables)]
        out = ensemble_mean(tables)
        perm = [tables[k] for k in rng.permutation(n_tables)]
        assert ensemble_mean(perm).rows == out.rows
        assert ensemble_mean(tables[:1]).rows == tables[0].rows
        for key, v in out.rows.items():
            vals = [t.rows[key] for t in tables]
            assert min(vals) <= v <= max(vals)
    budget.check()


@pytest.mark.criterion("end-to-end demo")
def test_end_to_end_demo():
    budget = Budget(60)
    cmd = [sys.executable, "-m", "relevance_forge", "demo", "--seed", "7"]
    first = subprocess.run(cmd, capture_output=True, text=True, check=True).stdout
    second = subprocess.run(cmd, capture_output=True, text=True, check=True).stdout
    assert first == second
    assert "== stage one" in first and "== stage two" in first
    f1 = re.search(r"^f1\s+([0-9.]+)$", first, re.M)
    assert f1 and float(f1.group(1)) > 0
    budget.check()
