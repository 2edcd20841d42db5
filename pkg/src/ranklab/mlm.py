"""Domain-adaptive masked-language pretraining at desk scale.

Each sequence has round(mask_rate * length) positions (minimum 1) replaced by
the MASK piece. Each masked piece is predicted from the mean embedding of the
sequence's unmasked positions through a full softmax over the vocabulary. The
trained embedding table warm-starts the dense encoder.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .dense import DenseEncoder
from .errors import NumericError, ToolkitWarning

DEFAULT_MASK_RATE = 0.15


@dataclass(frozen=True)
class MaskedSequence:
    """One sequence with MASK substituted; targets are (position, original id)."""

    ids: tuple[int, ...]
    targets: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class MaskedBatch:
    sequences: tuple[MaskedSequence, ...]

    def targets(self):
        """Flattened (sequence index, position, original id) triples."""
        return [
            (s, pos, orig)
            for s, seq in enumerate(self.sequences)
            for pos, orig in seq.targets
        ]


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def mask_tokens(piece_ids, mask_id: int, mask_rate: float = DEFAULT_MASK_RATE,
                rng=0) -> MaskedSequence | None:
    """Mask round(mask_rate * n) distinct positions (min 1), chosen uniformly.

    Empty sequences are skipped with a warning (returns None).
    """
    if not 0.0 < mask_rate < 1.0:
        raise ValueError(f"mask_rate must be in (0, 1), got {mask_rate}")
    ids = list(piece_ids)
    n = len(ids)
    if n == 0:
        warnings.warn("skipping empty sequence in masking", ToolkitWarning, stacklevel=2)
        return None
    n_mask = max(1, round(mask_rate * n))
    positions = sorted(_as_rng(rng).choice(n, size=n_mask, replace=False).tolist())
    targets = tuple((p, ids[p]) for p in positions)
    for p in positions:
        ids[p] = mask_id
    return MaskedSequence(tuple(ids), targets)


def make_masked_batch(sequences, mask_id: int, mask_rate: float = DEFAULT_MASK_RATE,
                      rng=0) -> MaskedBatch:
    """Mask every non-empty sequence with one shared random stream."""
    rng = _as_rng(rng)
    masked = []
    for ids in sequences:
        entry = mask_tokens(ids, mask_id, mask_rate, rng)
        if entry is not None:
            masked.append(entry)
    return MaskedBatch(tuple(masked))


class MlmModel:
    """Embedding table plus output projection for masked-piece prediction."""

    def __init__(self, embeddings: np.ndarray, output_weights: np.ndarray):
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        self.output_weights = np.asarray(output_weights, dtype=np.float64)
        if self.embeddings.shape != self.output_weights.shape:
            raise ValueError("embeddings and output weights must share a shape")

    @classmethod
    def init(cls, vocab_size: int, dim: int, seed: int = 0) -> "MlmModel":
        rng = np.random.default_rng(seed)
        half = 0.5 / dim
        embeddings = rng.uniform(-half, half, size=(vocab_size, dim))
        # zero output weights give the exact uniform-softmax starting loss ln(V)
        return cls(embeddings, np.zeros((vocab_size, dim)))

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def copy(self) -> "MlmModel":
        return MlmModel(self.embeddings.copy(), self.output_weights.copy())

    def save_embeddings(self, path) -> None:
        """Persist the embedding table in the dense-encoder checkpoint format."""
        save_arrays(path, "DENC", {"table": self.embeddings},
                    {"dim": self.dim, "vocab_size": self.vocab_size})

    def save(self, path) -> None:
        save_arrays(path, "MLMM",
                    {"embeddings": self.embeddings, "output_weights": self.output_weights},
                    {"dim": self.dim, "vocab_size": self.vocab_size})

    @classmethod
    def load(cls, path) -> "MlmModel":
        arrays, _ = load_arrays(path, "MLMM")
        return cls(arrays["embeddings"], arrays["output_weights"])


def masked_prediction_loss(model: MlmModel, batch: MaskedBatch) -> float:
    """Mean cross-entropy over all masked targets (no parameter update)."""
    total, count = _loss_and_grads(model, batch, want_grads=False)
    return total / count


def _loss_and_grads(model: MlmModel, batch: MaskedBatch, want_grads: bool):
    targets = batch.targets()
    if not targets:
        raise ValueError("batch has no masked targets")
    contexts = []
    for seq in batch.sequences:
        masked_positions = {p for p, _ in seq.targets}
        context_ids = [i for p, i in enumerate(seq.ids) if p not in masked_positions]
        if context_ids:
            contexts.append((context_ids, model.embeddings[context_ids].mean(axis=0)))
        else:
            contexts.append(([], np.zeros(model.dim)))
    grad_emb = np.zeros_like(model.embeddings) if want_grads else None
    grad_out = np.zeros_like(model.output_weights) if want_grads else None
    total = 0.0
    scale = 1.0 / len(targets)
    for seq_idx, _, original in targets:
        context_ids, c = contexts[seq_idx]
        logits = model.output_weights @ c
        shift = logits.max()
        exp = np.exp(logits - shift)
        log_norm = np.log(exp.sum()) + shift
        total += float(log_norm - logits[original])
        if want_grads:
            dlogits = exp / exp.sum()
            dlogits[original] -= 1.0
            grad_out += scale * np.outer(dlogits, c)
            if context_ids:
                dc = scale * (model.output_weights.T @ dlogits) / len(context_ids)
                for i in context_ids:
                    grad_emb[i] += dc
    if not np.isfinite(total):
        raise NumericError("non-finite masked-prediction loss")
    if want_grads:
        return total * scale, grad_emb, grad_out
    return total, len(targets)


def mlm_train_step(model: MlmModel, batch: MaskedBatch, learning_rate: float) -> tuple[MlmModel, float]:
    """One descent step on the mean masked-target cross-entropy."""
    loss, grad_emb, grad_out = _loss_and_grads(model, batch, want_grads=True)
    if not (np.all(np.isfinite(grad_emb)) and np.all(np.isfinite(grad_out))):
        raise NumericError("non-finite gradient in masked-language training")
    model.embeddings -= learning_rate * grad_emb
    model.output_weights -= learning_rate * grad_out
    return model, loss


def warm_start(encoder: DenseEncoder, pretrained: np.ndarray) -> DenseEncoder:
    """Replace the encoder's embedding table with pretrained embeddings."""
    pretrained = np.asarray(pretrained, dtype=np.float64)
    if pretrained.shape != encoder.table.shape:
        raise ValueError(
            f"pretrained table shape {pretrained.shape} does not match encoder {encoder.table.shape}"
        )
    return DenseEncoder(pretrained.copy())
