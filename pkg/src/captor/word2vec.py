"""Skip-gram embedding pretraining with a full softmax over the vocabulary.

Two tables are learned: center vectors (the ones returned as the word
representation) and context vectors. Training is plain full-batch gradient
descent; at desk-scale vocabularies the exact softmax is affordable and keeps
the loss monotone under a small enough step size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class Word2VecConfig:
    dim: int = 16
    window: int = 3
    epochs: int = 200
    lr: float = 0.1
    seed: int = 0


@dataclass
class EmbeddingPair:
    center: T.Tensor   # (V, E)
    context: T.Tensor  # (V, E)


def skipgram_pairs(corpus, window: int) -> list:
    """(center, context) id pairs within each sentence; boundaries not crossed."""
    if window < 1:
        raise ValueError("window must be >= 1")
    pairs = []
    for sentence in corpus:
        n = len(sentence)
        for t in range(n):
            for j in range(max(0, t - window), min(n, t + window + 1)):
                if j != t:
                    pairs.append((sentence[t], sentence[j]))
    return pairs


def skipgram_loss(pair_batch, emb: EmbeddingPair) -> T.Tensor:
    """Mean negative log-probability of each context word given its center."""
    if not pair_batch:
        raise ValueError("empty pair batch")
    total = None
    for center_id, context_id in pair_batch:
        center_vec = T.embedding_lookup(emb.center, center_id)
        scores = T.matmul(emb.context, center_vec)  # (V,)
        nll = T.scale(T.pick(T.log_softmax_axis(scores, axis=0), context_id), -1.0)
        total = nll if total is None else T.add(total, nll)
    return T.scale(total, 1.0 / len(pair_batch))


def train_word2vec(corpus, cfg: Word2VecConfig, vocab_size: int):
    """Full-batch descent over all skip-gram pairs; returns the center table.

    Deterministic under cfg.seed. Also returns the per-epoch loss history.
    """
    if not corpus or all(len(s) == 0 for s in corpus):
        raise ValueError("empty corpus")
    pairs = skipgram_pairs(corpus, cfg.window)
    rng = np.random.default_rng(cfg.seed)
    bound = 0.5 / cfg.dim
    center = rng.uniform(-bound, bound, size=(vocab_size, cfg.dim))
    context = rng.uniform(-bound, bound, size=(vocab_size, cfg.dim))
    history = []
    if not pairs:
        return center, history
    for _ in range(cfg.epochs):
        tape = T.Tape()
        emb = EmbeddingPair(center=tape.parameter(center), context=tape.parameter(context))
        loss = skipgram_loss(pairs, emb)
        T.backward(tape, loss)
        history.append(loss.item())
        center -= cfg.lr * emb.center.grad
        context -= cfg.lr * emb.context.grad
    return center, history
