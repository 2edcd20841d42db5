"""Weak-supervision synthesis and selection.

Synthesis runs a two-stage generation pipeline: a salience-based generator
produces a query from one seed document, BM25 retrieves related documents for
it, a contrastive generator turns a (higher-ranked, lower-ranked) document
pair into a sharper query, and the triple (query, positive, negative) becomes
weak training data.

Selection trains a logistic per-instance policy with REINFORCE: the reward is
the change in dev-set NDCG@10 after a trial reranker update on the selected
instances, against a running-mean baseline.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Document, Qrels, text_terms
from .dense import DenseEncoder, encode, similarity
from .errors import (
    ConfigError,
    DegeneratePairError,
    GenerationError,
    ParseError,
    ToolkitWarning,
)
from .evaluation import ndcg_at_k
from .rerank import FeatureExtractor, Ranker, pairwise_train_step, rerank
from .sparse import InvertedIndex, RankedList, bm25_score, idf, search_topk
from .stopwords import ENGLISH_STOPWORDS
from .subword import SubwordVocab, tokenize

DEFAULT_MAX_QUERY_TERMS = 6
DEFAULT_RETRIEVAL_DEPTH = 20
N_INSTANCE_FEATURES = 6

WEAK_SOURCES = ("qg-pipeline", "external")


@dataclass(frozen=True)
class WeakTriple:
    query: str
    pos_doc_id: str
    neg_doc_id: str
    source: str = "qg-pipeline"

    def __post_init__(self):
        if not self.query:
            raise ValueError("weak triple query must be non-empty")
        if self.pos_doc_id == self.neg_doc_id:
            raise ValueError("positive and negative documents must differ")
        if self.source not in WEAK_SOURCES:
            raise ValueError(f"source must be one of {WEAK_SOURCES}, got {self.source!r}")


class SalienceQueryGenerator:
    """Selects a document's most corpus-distinctive terms as the query.

    generate(d) scores terms by tf-idf against the index; contrast_generate
    scores them by the tf-idf difference between the two documents and only
    emits terms whose difference is positive. Selected terms are emitted in
    document order.
    """

    def __init__(self, index: InvertedIndex, max_query_terms: int = DEFAULT_MAX_QUERY_TERMS,
                 stopwords=ENGLISH_STOPWORDS):
        self.index = index
        self.max_query_terms = max_query_terms
        self.stopwords = stopwords

    def _content_counts(self, doc: Document) -> tuple[Counter, dict[str, int]]:
        terms = [t for t in text_terms(doc.text()) if t not in self.stopwords]
        first_pos: dict[str, int] = {}
        for i, t in enumerate(terms):
            first_pos.setdefault(t, i)
        return Counter(terms), first_pos

    def _tfidf(self, counts: Counter, term: str) -> float:
        return counts[term] * idf(self.index, term)

    def _select(self, scores: dict[str, float], first_pos: dict[str, int]) -> str:
        chosen = sorted(scores, key=lambda t: (-scores[t], first_pos[t]))[: self.max_query_terms]
        return " ".join(sorted(chosen, key=first_pos.__getitem__))

    def generate(self, doc: Document) -> str:
        counts, first_pos = self._content_counts(doc)
        if not counts:
            raise GenerationError(f"document {doc.doc_id!r} has no content terms")
        scores = {t: self._tfidf(counts, t) for t in counts}
        return self._select(scores, first_pos)

    def contrast_generate(self, pos: Document, neg: Document) -> str:
        pos_counts, first_pos = self._content_counts(pos)
        neg_counts, _ = self._content_counts(neg)
        salience = {
            t: self._tfidf(pos_counts, t) - self._tfidf(neg_counts, t) for t in pos_counts
        }
        eligible = {t: s for t, s in salience.items() if s > 0}
        if not eligible:
            raise DegeneratePairError(
                f"no positive-salience term between {pos.doc_id!r} and {neg.doc_id!r}"
            )
        return self._select(eligible, first_pos)


@dataclass(frozen=True)
class SynthesisRecord:
    """Provenance for one synthesized triple (used by replay checks)."""

    seed_doc_id: str
    stage1_query: str
    retrieved: tuple[str, ...]
    triple: WeakTriple


def synthesize_with_provenance(docs, index: InvertedIndex, count: int, seed: int = 0,
                               retrieval_depth: int = DEFAULT_RETRIEVAL_DEPTH,
                               max_query_terms: int = DEFAULT_MAX_QUERY_TERMS,
                               stopwords=ENGLISH_STOPWORDS,
                               include_stage1: bool = False) -> list[SynthesisRecord]:
    """Run the two-stage pipeline until `count` triples exist or retries run out."""
    if count < 1:
        raise ConfigError(f"triple count must be >= 1, got {count}")
    docs = list(docs)
    docs_by_id = {d.doc_id: d for d in docs}
    generator = SalienceQueryGenerator(index, max_query_terms, stopwords)
    rng = np.random.default_rng(seed)
    records: list[SynthesisRecord] = []
    made = 0
    attempts = 0
    max_attempts = max(20 * count, 100)
    while made < count and attempts < max_attempts:
        attempts += 1
        seed_doc = docs[int(rng.integers(len(docs)))]
        try:
            stage1 = generator.generate(seed_doc)
        except GenerationError:
            continue
        ranked = search_topk(index, stage1.split(), retrieval_depth)
        pool = ranked.entries[:retrieval_depth]
        half = len(pool) // 2
        pos_pool, neg_pool = pool[:half], pool[half:]
        if not pos_pool or not neg_pool:
            continue
        pos_id = pos_pool[int(rng.integers(len(pos_pool)))][0]
        neg_id = neg_pool[int(rng.integers(len(neg_pool)))][0]
        try:
            query = generator.contrast_generate(docs_by_id[pos_id], docs_by_id[neg_id])
        except DegeneratePairError:
            continue
        retrieved = tuple(d for d, _ in pool)
        records.append(SynthesisRecord(
            seed_doc.doc_id, stage1, retrieved, WeakTriple(query, pos_id, neg_id)))
        made += 1
        if include_stage1:
            records.append(SynthesisRecord(
                seed_doc.doc_id, stage1, retrieved, WeakTriple(stage1, pos_id, neg_id)))
    if made < count:
        warnings.warn(
            f"assembled only {made} of {count} requested weak triples",
            ToolkitWarning, stacklevel=2,
        )
    return records


def synthesize_triples(docs, index: InvertedIndex, count: int, seed: int = 0,
                       retrieval_depth: int = DEFAULT_RETRIEVAL_DEPTH,
                       max_query_terms: int = DEFAULT_MAX_QUERY_TERMS,
                       stopwords=ENGLISH_STOPWORDS,
                       include_stage1: bool = False) -> list[WeakTriple]:
    records = synthesize_with_provenance(
        docs, index, count, seed, retrieval_depth, max_query_terms, stopwords, include_stage1)
    return [r.triple for r in records]


def write_triples(triples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            record = {"query": t.query, "pos_doc_id": t.pos_doc_id,
                      "neg_doc_id": t.neg_doc_id, "source": t.source}
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def read_triples(path) -> list[WeakTriple]:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                triples.append(WeakTriple(
                    record["query"], record["pos_doc_id"], record["neg_doc_id"],
                    record.get("source", "external")))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(path, line_no, str(exc)) from exc
    return triples


class InstanceFeaturizer:
    """Fixed-order instance features for the selection policy.

    Order: BM25(q, d+), BM25(q, d-), BM25 difference, dense-similarity
    difference, query length, bias.
    """

    def __init__(self, index: InvertedIndex, docs, encoder: DenseEncoder, vocab: SubwordVocab):
        self.index = index
        self.docs_by_id = {d.doc_id: d for d in docs}
        self.encoder = encoder
        self.vocab = vocab
        self._doc_vectors: dict[str, np.ndarray] = {}

    def _doc_vector(self, doc_id: str) -> np.ndarray:
        vec = self._doc_vectors.get(doc_id)
        if vec is None:
            ids = tokenize(self.docs_by_id[doc_id].text(), self.vocab)
            vec = encode(self.encoder, ids) if ids else np.zeros(self.encoder.dim)
            self._doc_vectors[doc_id] = vec
        return vec

    def __call__(self, triple: WeakTriple) -> np.ndarray:
        terms = triple.query.split()
        pos_ord = self.index.ordinal_of[triple.pos_doc_id]
        neg_ord = self.index.ordinal_of[triple.neg_doc_id]
        bm25_pos = bm25_score(self.index, terms, pos_ord)
        bm25_neg = bm25_score(self.index, terms, neg_ord)
        query_ids = tokenize(triple.query, self.vocab)
        qv = encode(self.encoder, query_ids) if query_ids else np.zeros(self.encoder.dim)
        sim_diff = similarity(qv, self._doc_vector(triple.pos_doc_id)) - similarity(
            qv, self._doc_vector(triple.neg_doc_id))
        return np.array([
            bm25_pos, bm25_neg, bm25_pos - bm25_neg, sim_diff, float(len(terms)), 1.0,
        ])


def instance_features(triple: WeakTriple, index: InvertedIndex, docs,
                      encoder: DenseEncoder, vocab: SubwordVocab) -> np.ndarray:
    return InstanceFeaturizer(index, docs, encoder, vocab)(triple)


class SelectorPolicy:
    """Logistic per-instance selector with a running-mean reward baseline."""

    def __init__(self, weights=None, seed: int = 0):
        self.weights = (
            np.zeros(N_INSTANCE_FEATURES)
            if weights is None else np.asarray(weights, dtype=np.float64)
        )
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.baseline = 0.0
        self.reward_count = 0

    def selection_probability(self, features) -> float:
        z = float(np.dot(self.weights, features))
        if z >= 0:
            p = 1.0 / (1.0 + math.exp(-z))
        else:
            e = math.exp(z)
            p = e / (1.0 + e)
        # keep the probability strictly inside (0, 1) even when the sigmoid
        # saturates in floating point
        return min(max(p, 1e-12), 1.0 - 1e-12)

    def record_reward(self, reward: float) -> None:
        self.reward_count += 1
        self.baseline += (reward - self.baseline) / self.reward_count

    def save(self, path) -> None:
        payload = {
            "weights": [float(w) for w in self.weights],
            "baseline": self.baseline,
            "reward_count": self.reward_count,
            "seed": self.seed,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SelectorPolicy":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        policy = cls(np.asarray(payload["weights"]), seed=payload["seed"])
        policy.baseline = payload["baseline"]
        policy.reward_count = payload["reward_count"]
        return policy


class SelectionContext:
    """Frozen target-evaluation setup shared across selection steps.

    Precomputes base candidate lists for the dev queries and reranker features
    for every (query, candidate) pair, so each step only rescores.
    """

    def __init__(self, index: InvertedIndex, docs, encoder: DenseEncoder,
                 vocab: SubwordVocab, dev_queries, qrels: Qrels,
                 depth: int = 50, k: int = 10, stopwords=ENGLISH_STOPWORDS):
        self.qrels = qrels
        self.k = k
        self.depth = depth
        self.extractor = FeatureExtractor(index, docs, encoder, vocab, stopwords=stopwords)
        self.instance_featurizer = InstanceFeaturizer(index, docs, encoder, vocab)
        self.base: dict[int, RankedList] = {}
        self.features: dict[int, dict[str, np.ndarray]] = {}
        for query in dev_queries:
            base = search_topk(index, query, depth)
            self.base[query.query_id] = base
            self.features[query.query_id] = {
                doc_id: self.extractor.features(query.processed_terms, doc_id)
                for doc_id, _ in base.entries
            }

    def pair_features(self, triple: WeakTriple) -> tuple[np.ndarray, np.ndarray]:
        terms = triple.query.split()
        return (
            self.extractor.features(terms, triple.pos_doc_id),
            self.extractor.features(terms, triple.neg_doc_id),
        )

    def dev_ndcg(self, ranker: Ranker) -> float:
        values = []
        for query_id, base in self.base.items():
            reranked = rerank(ranker, base, self.depth, self.features[query_id])
            values.append(ndcg_at_k(reranked, self.qrels.judgments.get(query_id, {}), self.k))
        return sum(values) / len(values) if values else 0.0


def reinfoselect_step(policy: SelectorPolicy, batch, ranker: Ranker,
                      context: SelectionContext, ranker_lr: float = 0.1,
                      policy_lr: float = 1.0,
                      keep_all_updates: bool = False) -> tuple[SelectorPolicy, Ranker, float]:
    """One selection step: sample a mask, trial-train the ranker on the selected
    triples, reward = NDCG@10 change, REINFORCE update against the baseline.

    The trial ranker is kept only when the reward is non-negative unless
    keep_all_updates is set.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    features = [context.instance_featurizer(t) for t in batch]
    probs = np.array([policy.selection_probability(x) for x in features])
    actions = policy.rng.random(len(batch)) < probs
    selected = [t for t, a in zip(batch, actions) if a]

    before = context.dev_ndcg(ranker)
    if selected:
        trial = ranker.copy()
        pairs = [context.pair_features(t) for t in selected]
        pairwise_train_step(trial, pairs, ranker_lr)
        reward = context.dev_ndcg(trial) - before
    else:
        trial = ranker
        reward = 0.0

    advantage = reward - policy.baseline
    grad = np.zeros(N_INSTANCE_FEATURES)
    for x, p, a in zip(features, probs, actions):
        grad += (float(a) - p) * x
    policy.weights += policy_lr * advantage * grad
    policy.record_reward(reward)

    updated = trial if (keep_all_updates or reward >= 0.0) else ranker
    return policy, updated, reward
