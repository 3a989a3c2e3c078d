"""Scoring metrics: rank-sum AUC and attention-entropy diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import VocabConfig, build_batch, slice_batch
from .model import ModelParams, SamConfig, forward_batch


def auc(scores, labels=None) -> float:
    """Probability that a random positive outscores a random negative.

    Computed by the rank-sum method with average ranks for ties, so a tied
    positive/negative pair contributes exactly one half. Accepts either a
    list of (score, label) pairs or two parallel arrays.
    """
    if labels is None:
        pairs = list(scores)
        scores = np.array([s for s, _ in pairs], dtype=np.float64)
        labels = np.array([y for _, y in pairs], dtype=np.float64)
    else:
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"auc: scores {scores.shape} and labels {labels.shape} must be equal 1-D")
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos + neg != scores.size:
        raise ValueError("auc: labels must be 0 or 1")
    if pos == 0 or neg == 0:
        raise ValueError("auc is undefined without at least one positive and one negative")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    # average of the 1-based ranks start+1 .. end within each tie group
    ranks = ((starts + 1 + ends) / 2.0)[inverse]
    rank_sum_pos = ranks[labels == 1].sum()
    return (rank_sum_pos - pos * (pos + 1) / 2.0) / (pos * neg)


def attention_entropy(weights) -> float:
    """Shannon entropy (nats) of the normalized weight distribution.

    Weights are normalized to sum to one first; 0 * ln 0 counts as 0. An
    all-zero weight vector is treated as uniform, giving ln L.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"attention_entropy: expected a non-empty vector, got shape {w.shape}")
    if (w < 0).any():
        raise ValueError(f"attention_entropy: negative weight {w.min()}")
    total = w.sum()
    if total == 0:
        return math.log(w.size)
    p = w / total
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def score_corpus(params: ModelParams, cfg: SamConfig, corpus, vocab: VocabConfig,
                 batch_size: int = 512) -> np.ndarray:
    """Forward scores for every sample, no gradient bookkeeping."""
    full = build_batch(corpus, vocab, cfg.extra_dim)
    out = np.empty(full.size)
    for start in range(0, full.size, batch_size):
        idx = np.arange(start, min(start + batch_size, full.size))
        y, _ = forward_batch(params, slice_batch(full, idx), cfg)
        out[idx] = y.data
    return out


@dataclass
class EntropyTrace:
    """Mean attention entropy per walk iteration, averaged over samples."""

    mean_entropy: list[float]

    def to_csv(self) -> str:
        lines = ["iteration,mean_entropy"]
        for i, e in enumerate(self.mean_entropy, 1):
            lines.append(f"{i},{e!r}")
        return "\n".join(lines) + "\n"


def entropy_vs_iterations(params: ModelParams, cfg: SamConfig, corpus, vocab: VocabConfig,
                          batch_size: int = 512) -> EntropyTrace:
    """Per-iteration attention dispersion over a sample set.

    Samples with empty sequences carry no attention distribution and are
    skipped; each remaining sample contributes the entropy of its sliced
    (unpadded) weight vector.
    """
    full = build_batch(corpus, vocab, cfg.extra_dim)
    sums: np.ndarray | None = None
    count = 0
    for start in range(0, full.size, batch_size):
        idx = np.arange(start, min(start + batch_size, full.size))
        batch = slice_batch(full, idx)
        _, per_iter = forward_batch(params, batch, cfg)
        if not per_iter:
            continue
        if sums is None:
            sums = np.zeros(len(per_iter))
        for b in range(batch.size):
            length = int(batch.lengths[b])
            if length == 0:
                continue
            for n, w in enumerate(per_iter):
                sums[n] += attention_entropy(w.data[b, :length])
        count += int((batch.lengths > 0).sum())
    if sums is None or count == 0:
        return EntropyTrace([])
    return EntropyTrace([s / count for s in sums])
