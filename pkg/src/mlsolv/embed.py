"""Skip-gram (negative sampling) pretraining of substructure-token vectors and
per-atom embedding matrices."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .molgraph import MolecularGraph, atom_tokens, molecule_sentence

log = logging.getLogger(__name__)


@dataclass
class Vocabulary:
    tokens: list[int]
    counts: list[int]
    min_count: int = 1
    index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    @property
    def oov_index(self) -> int:
        """Sentinel index for unknown tokens; never a row of the table."""
        return len(self.tokens)

    def lookup(self, token: int) -> int:
        return self.index.get(token, self.oov_index)

    def encode(self, sentence: Iterable[int]) -> np.ndarray:
        """Known-token indices of a sentence; OOV tokens are dropped."""
        idx = [self.index[t] for t in sentence if t in self.index]
        return np.asarray(idx, dtype=np.int64)


def build_vocab(sentences: Sequence[Sequence], min_count: int = 1) -> Vocabulary:
    """Dense vocabulary ordered by descending frequency, ties by token value."""
    if min_count < 1:
        raise ValueError("min_count must be positive")
    counter = Counter(t for s in sentences for t in s)
    if not counter:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((item for item in counter.items() if item[1] >= min_count), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in kept], [c for _, c in kept], min_count)


@dataclass
class SkipGramConfig:
    dim: int = 128
    window: int = 2
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_count: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "window", "negatives", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0 and learning_rate > 0")


@dataclass
class EmbeddingTable:
    vocab: Vocabulary
    input: np.ndarray
    context: np.ndarray

    def __post_init__(self):
        if self.input.shape != self.context.shape or self.input.shape[0] != len(self.vocab):
            raise ValueError("embedding matrices must be V x d with V = len(vocab)")
        if not (np.all(np.isfinite(self.input)) and np.all(np.isfinite(self.context))):
            raise ValueError("embedding table contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.input.shape[1]

    def vector(self, token: int) -> np.ndarray:
        i = self.vocab.lookup(token)
        if i == self.vocab.oov_index:
            return np.zeros(self.dim)
        return self.input[i]


def _training_pairs(encoded: Sequence[np.ndarray], window: int):
    centers, contexts = [], []
    for sent in encoded:
        n = len(sent)
        for i in range(n):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    centers.append(sent[i])
                    contexts.append(sent[j])
    return np.asarray(centers, dtype=np.int64), np.asarray(contexts, dtype=np.int64)


def noise_distribution(vocab: Vocabulary) -> np.ndarray:
    p = np.asarray(vocab.counts, dtype=np.float64) ** 0.75
    return p / p.sum()


def train_skipgram(sentences: Sequence[Sequence], config: SkipGramConfig = SkipGramConfig(),
                   vocab: Vocabulary | None = None) -> EmbeddingTable:
    """Train skip-gram embeddings with negative sampling.

    Input vectors start uniform in ``±0.5/dim`` and context vectors at zero.
    Negatives follow the unigram^0.75 distribution; the learning rate decays
    linearly to 1e-4 of its start over all epochs. Fully determined by
    ``config.seed``.
    """
    if vocab is None:
        vocab = build_vocab(sentences, config.min_count)
    rng = np.random.default_rng(config.seed)
    V, d = len(vocab), config.dim
    w_in = (rng.random((V, d)) - 0.5) / d
    w_out = np.zeros((V, d))
    encoded = [vocab.encode(s) for s in sentences]
    centers, contexts = _training_pairs(encoded, config.window)
    if config.epochs == 0 or len(centers) == 0:
        return EmbeddingTable(vocab, w_in, w_out)

    noise = noise_distribution(vocab)
    total = config.epochs * len(centers)
    for epoch in range(config.epochs):
        order = rng.permutation(len(centers))
        negs = rng.choice(V, size=(len(centers), config.negatives), p=noise).astype(np.int64)
        done = epoch * len(centers) + np.arange(len(centers))
        lrs = config.learning_rate * np.maximum(1e-4, 1.0 - done / total)
        loss = _kernels.sgns_update(w_in, w_out, centers[order], contexts[order], negs, lrs)
        log.debug("skip-gram epoch %d: mean loss %.4f", epoch, loss / len(centers))
    return EmbeddingTable(vocab, w_in, w_out)


def skipgram_loss(table: EmbeddingTable, sentences: Sequence[Sequence], window: int = 2, negatives: int = 5,
                  seed: int = 0) -> float:
    """Mean negative-sampling loss per (center, context) pair with seeded negatives."""
    encoded = [table.vocab.encode(s) for s in sentences]
    centers, contexts = _training_pairs(encoded, window)
    if len(centers) == 0:
        raise ValueError("corpus yields no training pairs")
    rng = np.random.default_rng(seed)
    negs = rng.choice(len(table.vocab), size=(len(centers), negatives), p=noise_distribution(table.vocab))
    return _kernels.sgns_loss(table.input, table.context, centers, contexts, negs.astype(np.int64)) / len(centers)


def pretrain_on_graphs(graphs: Iterable[MolecularGraph], config: SkipGramConfig = SkipGramConfig()) -> EmbeddingTable:
    return train_skipgram([molecule_sentence(g) for g in graphs], config)


def embed_molecule(graph: MolecularGraph, table: EmbeddingTable, dim: int | None = None) -> np.ndarray:
    """Per-atom embedding matrix: row = vec(radius-1 token) + vec(radius-0 token).

    Unknown tokens contribute zeros.
    """
    if dim is not None and dim != table.dim:
        raise ValueError(f"embedding dimension {table.dim} does not match model dimension {dim}")
    X = np.zeros((graph.n_atoms, table.dim))
    for row, (r0, r1) in enumerate(atom_tokens(graph)):
        X[row] = table.vector(r1) + table.vector(r0)
    return X
