import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relevance_forge import _accel
from relevance_forge._accel import pool_hashed, sweep_per_query

needs_numba = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")


def random_batch(rng, n=20, length=12, vocab=500):
    ids = rng.integers(0, vocab, (n, length))
    lens = rng.integers(1, length + 1, n)
    mask = (np.arange(length)[None, :] < lens[:, None]).astype(np.int64)
    segments = ((np.arange(length)[None, :] >= (lens // 2)[:, None]) & (mask == 1)).astype(np.int64)
    return ids * mask, mask, segments


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_pool_paths_agree(seed):
    rng = np.random.default_rng(seed)
    ids, mask, seg = random_batch(rng)
    table = rng.standard_normal((97, 6))
    a = pool_hashed(ids, mask, seg, table, 5, use_numba=True)
    b = pool_hashed(ids, mask, seg, table, 5, use_numba=False)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_sweep_paths_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    scores = rng.integers(0, 10, n) / 10
    labels = rng.random(n) < 0.4
    qidx = rng.integers(0, 4, n)
    thresholds = np.linspace(0, 1, 23)
    a = sweep_per_query(scores, labels, qidx, 4, thresholds, use_numba=True)
    b = sweep_per_query(scores, labels, qidx, 4, thresholds, use_numba=False)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("use_numba", [False, pytest.param(True, marks=needs_numba)])
def test_pool_rows_are_batch_independent(use_numba):
    rng = np.random.default_rng(0)
    ids, mask, seg = random_batch(rng)
    table = rng.standard_normal((97, 6))
    full = pool_hashed(ids, mask, seg, table, 3, use_numba=use_numba)
    for i in range(len(ids)):
        one = pool_hashed(ids[i : i + 1], mask[i : i + 1], seg[i : i + 1], table, 3, use_numba=use_numba)
        assert one.tobytes() == full[i : i + 1].tobytes()


def test_empty_batch():
    out = pool_hashed(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros((0, 4)), np.ones((5, 3)), 0)
    assert out.shape == (0, 3)


def test_env_flag_selects_numpy():
    code = "from relevance_forge import _accel; print(_accel.USE_NUMBA)"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "RELEVANCE_FORGE_NUMBA": "0"},
                         capture_output=True, text=True, check=True).stdout
    assert out.strip() == "False"
