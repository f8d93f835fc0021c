"""Stage two: frozen hashed encoder, logistic and MLP relevance heads, training.

Class order is fixed everywhere: index 0 = irrelevant, index 1 = relevant.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from ._accel import pool_hashed
from .wordpiece import EncodedSequence

RELEVANT = 1


class ContractError(ValueError):
    pass


class TrainingError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderParams:
    dim: int = 64
    seed: int = 0
    table_size: int = 4096

    def __post_init__(self):
        if self.dim < 1 or self.table_size < 1:
            raise ContractError(f"dim and table_size must be >= 1: {self}")


@lru_cache(maxsize=8)
def _embedding_table(params: EncoderParams) -> np.ndarray:
    table = np.random.default_rng(params.seed).standard_normal((params.table_size, params.dim))
    table.setflags(write=False)
    return table


def encode_batch(ids: np.ndarray, mask: np.ndarray, segments: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Pooled vectors, one row per sequence; padding positions are ignored."""
    table = _embedding_table(params)
    return pool_hashed(ids, mask, segments, table, params.seed % params.table_size)


def encode_features(seq: EncodedSequence, params: EncoderParams) -> np.ndarray:
    return encode_batch(seq.ids[None, :], seq.mask[None, :], seq.segments[None, :], params)[0]


# -- heads -------------------------------------------------------------------


@dataclass
class LogisticHead:
    W: np.ndarray  # (2, dim)

    kind = "logistic"

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden(self) -> int:
        return 0

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W}

    def copy(self) -> "LogisticHead":
        return LogisticHead(self.W.copy())

    @classmethod
    def zeros(cls, dim: int) -> "LogisticHead":
        return cls(np.zeros((2, dim)))


@dataclass
class MlpHead:
    W1: np.ndarray  # (hidden, dim)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (2, hidden)
    b2: np.ndarray  # (2,)

    kind = "mlp"

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "MlpHead":
        return MlpHead(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    @classmethod
    def init(cls, dim: int, hidden: int = 32, seed: int = 0) -> "MlpHead":
        rng = np.random.default_rng(seed)
        return cls(
            rng.standard_normal((hidden, dim)) / np.sqrt(dim),
            np.zeros(hidden),
            rng.standard_normal((2, hidden)) / np.sqrt(hidden),
            np.zeros(2),
        )


Head = LogisticHead | MlpHead


def _rowwise(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    # X @ W.T, but reduced per row so results do not depend on batch composition.
    return (X[:, None, :] * W[None, :, :]).sum(axis=-1)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_width(H: np.ndarray, dim: int):
    if H.shape[-1] != dim:
        raise ContractError(f"feature width {H.shape[-1]} does not match head width {dim}")


def head_logits(H: np.ndarray, head: Head) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    single = H.ndim == 1
    H2 = H[None, :] if single else H
    if isinstance(head, LogisticHead):
        _check_width(H2, head.dim)
        z = _rowwise(H2, head.W)
    else:
        _check_width(H2, head.dim)
        if head.b1.shape != (head.hidden,) or head.W2.shape != (2, head.hidden) or head.b2.shape != (2,):
            raise ContractError("inconsistent MLP head shapes")
        r = np.maximum(_rowwise(H2, head.W1) + head.b1, 0.0)
        z = _rowwise(r, head.W2) + head.b2
    return z[0] if single else z


def head_prob(H: np.ndarray, head: Head) -> np.ndarray | float:
    p = softmax(head_logits(H, head))[..., RELEVANT]
    return float(p) if np.ndim(p) == 0 else p


def logistic_head_prob(h: np.ndarray, head: LogisticHead):
    """Relevance component of softmax(W h)."""
    return head_prob(h, head)


def mlp_head_prob(h: np.ndarray, head: MlpHead):
    """Relevance component of softmax(W2 relu(W1 h + b1) + b2)."""
    return head_prob(h, head)


# -- losses and gradients ----------------------------------------------------


def cross_entropy_and_grad(head: Head, H: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. head parameters."""
    H = np.asarray(H, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), y] = 1.0
    if isinstance(head, LogisticHead):
        z = H @ head.W.T
        G = (softmax(z) - onehot) / n
        loss = -log_softmax(z)[np.arange(n), y].mean()
        return float(loss), {"W": G.T @ H}
    a = H @ head.W1.T + head.b1
    r = np.maximum(a, 0.0)
    z = r @ head.W2.T + head.b2
    G = (softmax(z) - onehot) / n
    loss = -log_softmax(z)[np.arange(n), y].mean()
    da = (G @ head.W2) * (a > 0)
    return float(loss), {"W1": da.T @ H, "b1": da.sum(axis=0), "W2": G.T @ r, "b2": G.sum(axis=0)}


def _check_signed_label(n_classes: int, signed_label: int):
    if n_classes < 2:
        raise ContractError(f"need at least 2 classes, got {n_classes}")
    if not -n_classes <= signed_label <= n_classes - 1:
        raise ContractError(f"label {signed_label} outside [{-n_classes}, {n_classes - 1}]")


def complement_softmax_loss(logits: Sequence[float], signed_label: int) -> float:
    """Cross-entropy for label k >= 0; for label -(k+1), -log(1 - softmax_k).

    A negative label says only "not class k": the example may be any of the
    remaining classes, so their probabilities are pooled.
    """
    z = np.asarray(logits, dtype=np.float64)
    _check_signed_label(len(z), signed_label)
    m = z.max()
    lse_all = m + np.log(np.exp(z - m).sum())
    if signed_label >= 0:
        return float(lse_all - z[signed_label])
    k = -signed_label - 1
    rest = np.delete(z, k)
    mr = rest.max()
    lse_rest = mr + np.log(np.exp(rest - mr).sum())
    return float(lse_all - lse_rest)


def complement_softmax_grad(logits: Sequence[float], signed_label: int) -> np.ndarray:
    """Gradient of complement_softmax_loss w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    _check_signed_label(len(z), signed_label)
    p = softmax(z)
    target = np.zeros_like(z)
    if signed_label >= 0:
        target[signed_label] = 1.0
    else:
        k = -signed_label - 1
        rest = np.delete(np.arange(len(z)), k)
        target[rest] = softmax(z[rest])
    return p - target


# -- metrics -----------------------------------------------------------------


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    _, starts, counts = np.unique(sx, return_index=True, return_counts=True)
    avg = starts + (counts - 1) / 2.0 + 1.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, counts)
    return ranks


def batch_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC from the Mann-Whitney rank statistic; tied pairs count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    ranks = _average_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- data splitting and training ---------------------------------------------


@dataclass(frozen=True)
class LabeledPair:
    query_id: str
    item_id: str
    encoded: EncodedSequence
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label!r}")


def split_per_query(data: Sequence, eval_fraction: float = 0.1, seed: int = 0) -> tuple[list, list]:
    """Hold out ``floor(n * eval_fraction)`` (at least one when n >= 2) examples of every query.

    Each query is shuffled with its own generator derived from ``seed`` and the
    query id, so the split of one query does not depend on the others.
    Input order is preserved inside both outputs.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ContractError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    groups: dict[str, list[int]] = {}
    for i, ex in enumerate(data):
        groups.setdefault(ex.query_id, []).append(i)
    held_out: set[int] = set()
    for qid, idx in groups.items():
        n = len(idx)
        if n < 2:
            continue
        k = min(max(int(np.floor(n * eval_fraction)), 1), n - 1)
        rng = np.random.default_rng([seed, zlib.crc32(qid.encode("utf-8"))])
        held_out.update(idx[j] for j in rng.permutation(n)[:k])
    train = [ex for i, ex in enumerate(data) if i not in held_out]
    evals = [ex for i, ex in enumerate(data) if i in held_out]
    return train, evals


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    batch_size: int = 32
    max_epochs: int = 50
    eval_fraction: float = 0.1
    patience: int = 5
    seed: int = 0
    hidden: int = 32

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ContractError(f"invalid training config {self}")


@dataclass
class TrainResult:
    head: Head
    log: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0

    def log_lines(self) -> list[str]:
        lines = ["epoch\ttrain_loss\teval_auc"]
        lines += [f"{e}\t{loss:.17g}\t{auc:.17g}" for e, loss, auc in self.log]
        return lines


def _features(pairs: Sequence[LabeledPair], enc: EncoderParams) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        return np.zeros((0, enc.dim)), np.zeros(0, dtype=np.int64)
    ids = np.stack([p.encoded.ids for p in pairs])
    mask = np.stack([p.encoded.mask for p in pairs])
    seg = np.stack([p.encoded.segments for p in pairs])
    return encode_batch(ids, mask, seg, enc), np.array([p.label for p in pairs], dtype=np.int64)


def train_head_on_features(
    H_train: np.ndarray,
    y_train: np.ndarray,
    H_eval: np.ndarray,
    y_eval: np.ndarray,
    cfg: TrainConfig,
    head_kind: Literal["logistic", "mlp"] = "logistic",
) -> TrainResult:
    """Mini-batch gradient descent on the head; early stop on eval AUC."""
    if len(y_train) == 0:
        raise TrainingError("empty training set")
    if len(np.unique(y_train)) < 2:
        raise TrainingError("training data contains a single class")
    dim = H_train.shape[1]
    if head_kind == "logistic":
        head: Head = LogisticHead.zeros(dim)
    elif head_kind == "mlp":
        head = MlpHead.init(dim, cfg.hidden, cfg.seed)
    else:
        raise ContractError(f"unknown head kind {head_kind!r}")

    rng = np.random.default_rng(cfg.seed)
    use_eval = len(y_eval) > 0 and len(np.unique(y_eval)) == 2
    best_head, best_auc, best_epoch, stale = head.copy(), -np.inf, 0, 0
    log = []
    n = len(y_train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grads = cross_entropy_and_grad(head, H_train[batch], y_train[batch])
            for name, g in grads.items():
                param = getattr(head, name)
                param -= cfg.learning_rate * g
        loss, _ = cross_entropy_and_grad(head, H_train, y_train)
        auc = batch_auc(head_prob(H_eval, head), y_eval) if use_eval else float("nan")
        log.append((epoch, loss, auc))
        if not use_eval:
            best_head, best_epoch = head.copy(), epoch
            continue
        if auc > best_auc:
            best_head, best_auc, best_epoch, stale = head.copy(), auc, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best_head, log, best_epoch)


def train_head(
    train: Sequence[LabeledPair],
    evals: Sequence[LabeledPair],
    enc: EncoderParams,
    cfg: TrainConfig,
    head_kind: Literal["logistic", "mlp"] = "logistic",
) -> TrainResult:
    H_train, y_train = _features(train, enc)
    H_eval, y_eval = _features(evals, enc)
    return train_head_on_features(H_train, y_train, H_eval, y_eval, cfg, head_kind)


# -- model files -------------------------------------------------------------


@dataclass
class Model:
    head: Head
    encoder: EncoderParams

    def score_batch(self, ids, mask, segments) -> np.ndarray:
        return head_prob(encode_batch(ids, mask, segments, self.encoder), self.head)


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(format(float(x), ".17g") for x in row)


def save_model(model: Model, path: str | Path) -> None:
    head, enc = model.head, model.encoder
    lines = [f"{head.kind} {enc.dim} {head.hidden} {enc.seed} {enc.table_size}"]
    if isinstance(head, LogisticHead):
        lines += [_fmt_row(r) for r in head.W]
    else:
        lines += [_fmt_row(r) for r in head.W1]
        lines.append(_fmt_row(head.b1))
        lines += [_fmt_row(r) for r in head.W2]
        lines.append(_fmt_row(head.b2))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> Model:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ModelFormatError(f"{path}: empty model file")
    header = lines[0].split()
    if len(header) != 5:
        raise ModelFormatError(f"{path}: header must be 'kind dim hidden seed table_size'")
    kind = header[0]
    try:
        dim, hidden, seed, table_size = map(int, header[1:])
        rows = [np.array([float(x) for x in ln.split()]) for ln in lines[1:] if ln.strip()]
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    enc = EncoderParams(dim, seed, table_size)

    def take(n, width):
        nonlocal rows
        block, rows = rows[:n], rows[n:]
        if len(block) != n or any(len(r) != width for r in block):
            raise ModelFormatError(f"{path}: expected {n} rows of width {width}")
        return np.stack(block)

    if kind == "logistic":
        head: Head = LogisticHead(take(2, dim))
    elif kind == "mlp":
        head = MlpHead(take(hidden, dim), take(1, hidden)[0], take(2, hidden), take(1, 2)[0])
    else:
        raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
    if rows:
        raise ModelFormatError(f"{path}: trailing rows")
    return Model(head, enc)
