"""Hot numeric kernels, each with a numba build and a pure-numpy twin.

Set ``RELEVANCE_FORGE_NUMBA=0`` to force the numpy path (also used when numba
is not importable). Both paths compute row-by-row so that a row's result does
not depend on which other rows share its batch.
"""

from __future__ import annotations

import os

import numpy as np

HASH_MULT = 2654435761

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("RELEVANCE_FORGE_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def _pool_hashed_numpy(ids, mask, segments, table, offset):
    rows = ((ids * 2 + segments) * HASH_MULT + offset) % table.shape[0]
    emb = table[rows] * mask[:, :, None]
    return emb.sum(axis=1) / mask.sum(axis=1)[:, None]


def _per_query_f1_numpy(pred, labels, qidx, n_queries):
    tp = np.bincount(qidx, weights=pred & labels, minlength=n_queries)
    fp = np.bincount(qidx, weights=pred & ~labels, minlength=n_queries)
    fn = np.bincount(qidx, weights=~pred & labels, minlength=n_queries)
    denom = 2 * tp + fp + fn
    out = np.ones(n_queries)
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


def _sweep_per_query_numpy(scores, labels, qidx, n_queries, thresholds):
    out = np.empty(len(thresholds))
    for t, thr in enumerate(thresholds):
        out[t] = _per_query_f1_numpy(scores >= thr, labels, qidx, n_queries).mean()
    return out


if NUMBA_AVAILABLE:

    @numba.njit(cache=True)
    def _pool_hashed_numba(ids, mask, segments, table, offset):
        n, length = ids.shape
        size, dim = table.shape
        out = np.zeros((n, dim))
        for i in range(n):
            count = 0
            for j in range(length):
                if mask[i, j] == 0:
                    continue
                row = ((ids[i, j] * 2 + segments[i, j]) * HASH_MULT + offset) % size
                for k in range(dim):
                    out[i, k] += table[row, k]
                count += 1
            for k in range(dim):
                out[i, k] /= count
        return out

    @numba.njit(cache=True)
    def _sweep_per_query_numba(scores, labels, qidx, n_queries, thresholds):
        out = np.empty(len(thresholds))
        tp = np.zeros(n_queries)
        fp = np.zeros(n_queries)
        fn = np.zeros(n_queries)
        for t in range(len(thresholds)):
            thr = thresholds[t]
            tp[:] = 0.0
            fp[:] = 0.0
            fn[:] = 0.0
            for i in range(len(scores)):
                q = qidx[i]
                if scores[i] >= thr:
                    if labels[i]:
                        tp[q] += 1.0
                    else:
                        fp[q] += 1.0
                elif labels[i]:
                    fn[q] += 1.0
            total = 0.0
            for q in range(n_queries):
                denom = 2.0 * tp[q] + fp[q] + fn[q]
                total += 1.0 if denom == 0.0 else 2.0 * tp[q] / denom
            out[t] = total / n_queries
        return out


def pool_hashed(ids, mask, segments, table, offset: int, use_numba: bool | None = None) -> np.ndarray:
    """Mean over unmasked positions of ``table[hash(id, segment)]`` for each row."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    mask = np.ascontiguousarray(mask, dtype=np.int64)
    segments = np.ascontiguousarray(segments, dtype=np.int64)
    if ids.shape[0] == 0:
        return np.zeros((0, table.shape[1]))
    if USE_NUMBA if use_numba is None else use_numba:
        return _pool_hashed_numba(ids, mask, segments, table, np.int64(offset))
    return _pool_hashed_numpy(ids, mask, segments, table, offset)


def sweep_per_query(scores, labels, qidx, n_queries: int, thresholds, use_numba: bool | None = None) -> np.ndarray:
    """Mean per-query F1 at each threshold (prediction rule: score >= threshold)."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.bool_)
    qidx = np.ascontiguousarray(qidx, dtype=np.int64)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if USE_NUMBA if use_numba is None else use_numba:
        return _sweep_per_query_numba(scores, labels, qidx, n_queries, thresholds)
    return _sweep_per_query_numpy(scores, labels, qidx, n_queries, thresholds)
