"""Feature-based trainable reranker with configurable depth, plus score
interpolation and reciprocal-rank fusion for combining dense retrieval with
the sparse pipeline.

Ranker features, in fixed order: BM25 score, dense similarity, content-term
overlap fraction, matched-idf sum, query length, bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .corpus import Qrels, text_terms
from .dense import DenseEncoder, DenseIndex, encode, similarity
from .errors import NumericError
from .sparse import InvertedIndex, RankedList, bm25_score, idf
from .stopwords import ENGLISH_STOPWORDS
from .subword import SubwordVocab, tokenize

N_FEATURES = 6
FEATURE_NAMES = ("bm25", "dense_sim", "overlap", "matched_idf", "query_len", "bias")

DEFAULT_DEPTH = 100
DEFAULT_ALPHA = 0.5
DEFAULT_RRF_K = 60

# minimum score gap enforced so reranked lists strictly decrease; one step of
# the 6-decimal run serialization so the gap survives a write/read round trip
_TIE_EPS = 1e-6


class Ranker:
    """Linear scorer over the fixed query-document feature vector."""

    def __init__(self, weights=None):
        self.weights = (
            np.zeros(N_FEATURES) if weights is None else np.asarray(weights, dtype=np.float64)
        )
        if self.weights.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} weights, got {self.weights.shape}")

    def score(self, features) -> float:
        return float(np.dot(self.weights, features))

    def copy(self) -> "Ranker":
        return Ranker(self.weights.copy())

    def save(self, path) -> None:
        save_arrays(path, "RNKR", {"weights": self.weights}, {"n_features": N_FEATURES})

    @classmethod
    def load(cls, path) -> "Ranker":
        arrays, _ = load_arrays(path, "RNKR")
        return cls(arrays["weights"])


class FeatureExtractor:
    """Computes the reranker's feature vector for (query terms, document)."""

    def __init__(self, index: InvertedIndex, docs, encoder: DenseEncoder,
                 vocab: SubwordVocab, dense_index: DenseIndex | None = None,
                 k1: float = 0.9, b: float = 0.4, stopwords=ENGLISH_STOPWORDS):
        self.index = index
        self.docs_by_id = {d.doc_id: d for d in docs}
        self.encoder = encoder
        self.vocab = vocab
        self.k1 = k1
        self.b = b
        self.stopwords = stopwords
        self._doc_vectors: dict[str, np.ndarray] = {}
        if dense_index is not None:
            for row, doc_id in enumerate(dense_index.doc_ids):
                self._doc_vectors[doc_id] = dense_index.vectors[row]
        self._doc_terms: dict[str, set[str]] = {}

    def doc_vector(self, doc_id: str) -> np.ndarray:
        vec = self._doc_vectors.get(doc_id)
        if vec is None:
            ids = tokenize(self.docs_by_id[doc_id].text(), self.vocab)
            vec = encode(self.encoder, ids) if ids else np.zeros(self.encoder.dim)
            self._doc_vectors[doc_id] = vec
        return vec

    def _content_terms(self, doc_id: str) -> set[str]:
        terms = self._doc_terms.get(doc_id)
        if terms is None:
            terms = {
                t for t in text_terms(self.docs_by_id[doc_id].text())
                if t not in self.stopwords
            }
            self._doc_terms[doc_id] = terms
        return terms

    def features(self, query_terms, doc_id: str) -> np.ndarray:
        query_terms = list(query_terms)
        unique = sorted(set(query_terms))
        ordinal = self.index.ordinal_of[doc_id]
        bm25 = bm25_score(self.index, query_terms, ordinal, self.k1, self.b)
        query_ids = tokenize(" ".join(query_terms), self.vocab)
        qv = encode(self.encoder, query_ids) if query_ids else np.zeros(self.encoder.dim)
        dense_sim = similarity(qv, self.doc_vector(doc_id))
        doc_terms = self._content_terms(doc_id)
        matched = [t for t in unique if t in doc_terms]
        overlap = len(matched) / len(unique) if unique else 0.0
        matched_idf = sum(idf(self.index, t) for t in matched)
        return np.array([bm25, dense_sim, overlap, matched_idf, float(len(query_terms)), 1.0])


def _strictly_decreasing(entries):
    """Nudge any non-decreasing score onto a strictly decreasing staircase."""
    out = []
    prev = None
    for doc_id, score in entries:
        if prev is not None and score >= prev:
            score = prev - _TIE_EPS
        out.append((doc_id, score))
        prev = score
    return out


def rerank(ranker: Ranker, candidates: RankedList, depth: int, features) -> RankedList:
    """Rescore the top-`depth` candidates; the rest keep base order below them.

    `features` maps doc_id -> feature vector (or is a callable doc_id -> vector)
    for at least the top-`depth` candidates.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if not candidates.entries:
        return candidates
    feature_of = features if callable(features) else features.__getitem__
    block = candidates.entries[:depth]
    rescored = sorted(
        ((doc_id, ranker.score(feature_of(doc_id))) for doc_id, _ in block),
        key=lambda e: (-e[1], e[0]),
    )
    rescored = _strictly_decreasing(rescored)
    tail_start = rescored[-1][1] - 1.0
    tail = [
        (doc_id, tail_start - i)
        for i, (doc_id, _) in enumerate(candidates.entries[depth:])
    ]
    return RankedList(candidates.query_id, tuple(rescored + tail))


def pairwise_train_step(ranker: Ranker, feature_pairs, learning_rate: float) -> tuple[Ranker, float]:
    """One descent step on the mean pairwise logistic loss ln(1 + e^-(s+ - s-)).

    `feature_pairs` holds (positive features, negative features) per training
    triple; features come from FeatureExtractor or any 6-vector source.
    """
    pairs = [(np.asarray(p, dtype=np.float64), np.asarray(n, dtype=np.float64))
             for p, n in feature_pairs]
    if not pairs:
        raise ValueError("feature_pairs must be non-empty")
    grad = np.zeros(N_FEATURES)
    total = 0.0
    scale = 1.0 / len(pairs)
    for pos, neg in pairs:
        diff = pos - neg
        margin = float(np.dot(ranker.weights, diff))
        # stable softplus(-margin)
        if margin >= 0:
            total += math.log1p(math.exp(-margin))
        else:
            total += -margin + math.log1p(math.exp(margin))
        sig = 1.0 / (1.0 + math.exp(-margin)) if margin >= 0 else (
            math.exp(margin) / (1.0 + math.exp(margin))
        )
        grad += scale * (sig - 1.0) * diff
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in pairwise training step")
    ranker.weights -= learning_rate * grad
    return ranker, total * scale


@dataclass(frozen=True)
class FusionConfig:
    strategy: str = "rerank-interpolation"  # rerank-interpolation | base-union | rrf
    alpha: float = DEFAULT_ALPHA
    rrf_k: int = DEFAULT_RRF_K

    def __post_init__(self):
        if self.strategy not in ("rerank-interpolation", "base-union", "rrf"):
            raise ValueError(f"unknown fusion strategy {self.strategy!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.rrf_k < 1:
            raise ValueError(f"rrf_k must be >= 1, got {self.rrf_k}")


def _minmax_normalize(scores: dict[str, float]) -> dict[str, float]:
    if not scores:
        return {}
    lo, hi = min(scores.values()), max(scores.values())
    if hi == lo:
        return {d: 0.5 for d in scores}
    return {d: (s - lo) / (hi - lo) for d, s in scores.items()}


def fuse_interpolate(query_id: int, ranker_scores, dense_scores, alpha: float = DEFAULT_ALPHA) -> RankedList:
    """alpha * normalized dense + (1 - alpha) * normalized ranker, per query.

    Scores are min-max normalized to [0, 1]; a degenerate component (all its
    scores equal) contributes 0.5 uniformly. Docs missing from one component
    take 0 from it.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    rn = _minmax_normalize(dict(ranker_scores))
    dn = _minmax_normalize(dict(dense_scores))
    fused = {
        d: alpha * dn.get(d, 0.0) + (1.0 - alpha) * rn.get(d, 0.0)
        for d in sorted(set(rn) | set(dn))
    }
    return RankedList.from_scores(query_id, fused.items())


def reciprocal_rank_fusion(lists, k: int, rrf_k: int = DEFAULT_RRF_K) -> RankedList:
    """Combine ranked lists by summed 1 / (rrf_k + rank); uses ranks only."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lists = list(lists)
    if not lists:
        raise ValueError("need at least one ranked list")
    query_ids = {rl.query_id for rl in lists}
    if len(query_ids) != 1:
        raise ValueError(f"cannot fuse lists for different queries: {sorted(query_ids)}")
    scores: dict[str, float] = {}
    for rl in lists:
        for rank, (doc_id, _) in enumerate(rl.entries, start=1):
            scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (rrf_k + rank)
    fused = RankedList.from_scores(query_ids.pop(), scores.items())
    return fused.top(k)


def fuse_base_union(bm25_list: RankedList, dense_list: RankedList, k: int,
                    rrf_k: int = DEFAULT_RRF_K) -> RankedList:
    """Reciprocal-rank fusion of the two base-retrieval candidate lists."""
    return reciprocal_rank_fusion([bm25_list, dense_list], k, rrf_k)


def depth_sweep(ranker: Ranker, base_runs, depths, qrels: Qrels, features_by_query,
                k: int = 10) -> dict[int, dict[str, float]]:
    """Evaluate NDCG@k and P@5 of reranking at each depth; one row per depth."""
    from .evaluation import ndcg_at_k, precision_at_k

    if not depths:
        raise ValueError("depths must be non-empty")
    table: dict[int, dict[str, float]] = {}
    query_ids = qrels.query_ids()
    for depth in depths:
        ndcgs, precs = [], []
        for query_id in query_ids:
            base = base_runs.get(query_id)
            entry = qrels.judgments[query_id]
            if base is None:
                ndcgs.append(0.0)
                precs.append(0.0)
                continue
            reranked = rerank(ranker, base, depth, features_by_query[query_id])
            ndcgs.append(ndcg_at_k(reranked, entry, k))
            precs.append(precision_at_k(reranked, entry, 5))
        table[depth] = {
            f"ndcg@{k}": sum(ndcgs) / len(ndcgs) if ndcgs else 0.0,
            "p@5": sum(precs) / len(precs) if precs else 0.0,
        }
    return table
