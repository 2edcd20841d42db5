"""Trainable dense retriever: mean-pooled embedding encoder, dot-product
similarity, softmax contrastive loss over m negatives, and exact top-k search.

The optimizer is plain gradient descent with a fixed rate so analytic
gradients can be checked against finite differences exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .errors import NumericError, ToolkitWarning
from .sparse import RankedList
from .subword import DEFAULT_MAX_SEQUENCE_LENGTH, SubwordVocab, tokenize

DEFAULT_DIM = 64
DEFAULT_LEARNING_RATE = 0.05
DEFAULT_NEGATIVES = 4


class DenseEncoder:
    """Trainable |vocab| x dim embedding table; encode() mean-pools piece rows."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    @classmethod
    def init(cls, vocab_size: int, dim: int = DEFAULT_DIM, seed: int = 0) -> "DenseEncoder":
        rng = np.random.default_rng(seed)
        half = 0.5 / dim
        return cls(rng.uniform(-half, half, size=(vocab_size, dim)))

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def copy(self) -> "DenseEncoder":
        return DenseEncoder(self.table.copy())

    def save(self, path) -> None:
        save_arrays(path, "DENC", {"table": self.table},
                    {"dim": self.dim, "vocab_size": self.vocab_size})

    @classmethod
    def load(cls, path) -> "DenseEncoder":
        arrays, _ = load_arrays(path, "DENC")
        return cls(arrays["table"])


def encode(encoder: DenseEncoder, piece_ids) -> np.ndarray:
    """Mean of the embedding rows for the given piece ids."""
    ids = list(piece_ids)
    if not ids:
        warnings.warn("encoding an empty id sequence yields the zero vector",
                      ToolkitWarning, stacklevel=2)
        return np.zeros(encoder.dim)
    return encoder.table[ids].mean(axis=0)


def similarity(qv: np.ndarray, dv: np.ndarray) -> float:
    """Dot product; the retrieval similarity."""
    qv = np.asarray(qv, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    if qv.shape != dv.shape:
        raise ValueError(f"dimension mismatch: {qv.shape} vs {dv.shape}")
    return float(np.dot(qv, dv))


@dataclass(frozen=True)
class TrainingTriple:
    """One supervision unit: query ids, positive doc ids, m negative docs' ids."""

    query_ids: tuple[int, ...]
    positive_ids: tuple[int, ...]
    negative_ids: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.negative_ids) < 1:
            raise ValueError("a training triple needs at least one negative")
        if self.positive_ids in self.negative_ids:
            raise ValueError("positive document also listed as a negative")

    @classmethod
    def from_texts(cls, query: str, positive: str, negatives, vocab: SubwordVocab,
                   max_length: int = DEFAULT_MAX_SEQUENCE_LENGTH) -> "TrainingTriple":
        return cls(
            tuple(tokenize(query, vocab, max_length)),
            tuple(tokenize(positive, vocab, max_length)),
            tuple(tuple(tokenize(n, vocab, max_length)) for n in negatives),
        )


def _triple_similarities(encoder: DenseEncoder, triple: TrainingTriple):
    qv = encode(encoder, triple.query_ids)
    pv = encode(encoder, triple.positive_ids)
    nvs = [encode(encoder, n) for n in triple.negative_ids]
    sims = np.array([similarity(qv, pv)] + [similarity(qv, nv) for nv in nvs])
    return qv, pv, nvs, sims


def contrastive_loss(encoder: DenseEncoder, triple: TrainingTriple) -> float:
    """Negative log-softmax of the positive similarity against the negatives."""
    _, _, _, sims = _triple_similarities(encoder, triple)
    if not np.all(np.isfinite(sims)):
        raise NumericError("non-finite similarity in contrastive loss")
    shift = sims.max()
    return float(np.log(np.exp(sims - shift).sum()) + shift - sims[0])


def _accumulate(grad: np.ndarray, ids, vec: np.ndarray) -> None:
    if not ids:
        return
    contribution = vec / len(ids)
    for i in ids:
        grad[i] += contribution


def train_step(encoder: DenseEncoder, batch, learning_rate: float) -> tuple[DenseEncoder, float]:
    """One gradient-descent step on the mean contrastive loss of the batch."""
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    grad = np.zeros_like(encoder.table)
    total_loss = 0.0
    scale = 1.0 / len(batch)
    for triple in batch:
        qv, pv, nvs, sims = _triple_similarities(encoder, triple)
        if not np.all(np.isfinite(sims)):
            raise NumericError("non-finite similarity during training")
        shift = sims.max()
        exp = np.exp(sims - shift)
        probs = exp / exp.sum()
        total_loss += float(np.log(exp.sum()) + shift - sims[0])
        # dloss/dsim = probs - onehot(positive)
        dsims = probs.copy()
        dsims[0] -= 1.0
        dq = dsims[0] * pv + sum(d * nv for d, nv in zip(dsims[1:], nvs))
        _accumulate(grad, triple.query_ids, scale * dq)
        _accumulate(grad, triple.positive_ids, scale * dsims[0] * qv)
        for d, ids in zip(dsims[1:], triple.negative_ids):
            _accumulate(grad, ids, scale * d * qv)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in dense training step")
    encoder.table -= learning_rate * grad
    return encoder, total_loss * scale


class DenseIndex:
    """Document vectors produced by one encoder state, in corpus order."""

    def __init__(self, vectors: np.ndarray, doc_ids):
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.doc_ids = list(doc_ids)
        if self.vectors.shape[0] != len(self.doc_ids):
            raise ValueError("vector row count does not match doc_ids")

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path) -> None:
        save_arrays(path, "DIDX", {"vectors": self.vectors},
                    {"dim": self.dim, "doc_count": self.doc_count, "doc_ids": self.doc_ids})

    @classmethod
    def load(cls, path) -> "DenseIndex":
        arrays, meta = load_arrays(path, "DIDX")
        return cls(arrays["vectors"], meta["doc_ids"])


def build_dense_index(encoder: DenseEncoder, docs, vocab: SubwordVocab,
                      max_length: int = DEFAULT_MAX_SEQUENCE_LENGTH) -> DenseIndex:
    """Encode every document (title + abstract) into one vector row."""
    docs = list(docs)
    vectors = np.zeros((len(docs), encoder.dim))
    doc_ids = []
    for row, doc in enumerate(docs):
        ids = tokenize(doc.text(), vocab, max_length)
        if ids:
            vectors[row] = encode(encoder, ids)
        doc_ids.append(doc.doc_id)
    return DenseIndex(vectors, doc_ids)


def dense_search_topk(index: DenseIndex, encoder: DenseEncoder, query_ids, k: int,
                      query_id: int = 0) -> RankedList:
    """Exact top-k by dot product over all document vectors."""
    if index.dim != encoder.dim:
        raise ValueError(f"index dim {index.dim} does not match encoder dim {encoder.dim}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    qv = encode(encoder, query_ids)
    scores = index.vectors @ qv
    order = sorted(range(index.doc_count), key=lambda o: (-scores[o], index.doc_ids[o]))
    return RankedList(query_id, tuple((index.doc_ids[o], float(scores[o])) for o in order[:k]))
