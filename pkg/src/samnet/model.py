"""The sparse attentive memory forward pass and its ablation variants.

The prediction pipeline is: encode the behavior sequence, walk it N times
with dual-query attention (target embedding and a memory vector as the two
queries), update the memory with one GRU step per walk, refine the memory
with t target-conditioned GRU steps, then score through an MLP head. Only
the N + t memory updates are sequential; everything else is position-wise,
so work and live memory grow linearly with sequence length.

Variants (one delta from the full model each):
  * ``no_mem_enhance``    skips the refinement steps (t = 0).
  * ``no_iterative_walk`` single attention pass with the target as both
    queries and no memory GRU; the pooled interest feeds the head directly.
  * ``dot_product``       attention weights from scaled dot products of
    each row with the two queries instead of the learned feed-forward op.
  * ``avg_pool``          uniform weights 1/L, no attention at all.

``self_attention_score`` is a deliberately materialized L x L softmax
attention used by the benchmark as a quadratic-complexity foil; it is
never trained.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .encoder import (EmbeddingTables, SampleBatch, VocabConfig, build_batch,
                      embed_target_batch, encode_batch, init_tables)
from .errors import ConfigError, ShapeError
from .gru import GruParams, gru_step, init_gru
from .instrument import Meter, current_meter
from .kernels import Tensor

VARIANTS = ("full", "no_mem_enhance", "no_iterative_walk", "dot_product", "avg_pool")


@dataclass
class SamConfig:
    d_i: int = 16
    d_h: int = 32
    num_walk_iters: int = 3
    mem_steps: int = 3
    mlp_layers: tuple[int, ...] = (64, 32)
    variant: str = "full"
    use_ts_pos: bool = True
    extra_dim: int = 0

    def validate(self) -> None:
        if self.d_i % 4 != 0 or self.d_i < 4:
            raise ConfigError(f"d_i must be a positive multiple of 4, got {self.d_i}")
        if self.d_h < 1:
            raise ConfigError(f"d_h must be >= 1, got {self.d_h}")
        if self.num_walk_iters < 1:
            raise ConfigError(f"num_walk_iters must be >= 1, got {self.num_walk_iters}")
        if self.mem_steps < 0:
            raise ConfigError(f"mem_steps must be >= 0, got {self.mem_steps}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not self.mlp_layers:
            raise ConfigError("mlp_layers must name at least one hidden layer")
        if self.extra_dim < 0:
            raise ConfigError("extra_dim must be >= 0")

    @property
    def effective_mem_steps(self) -> int:
        return 0 if self.variant == "no_mem_enhance" else self.mem_steps


@dataclass
class AttentionParams:
    """Two-layer position-wise feed-forward attention, shared across rows."""

    w1: Tensor  # (4*d_i, d_h)
    b1: Tensor  # (d_h,)
    w2: Tensor  # (d_h,)
    b2: Tensor  # scalar

    def named(self):
        yield "attn.w1", self.w1
        yield "attn.b1", self.b1
        yield "attn.w2", self.w2
        yield "attn.b2", self.b2


@dataclass
class MemoryState:
    """Memory vector carried across walk iterations; starts at the target."""

    m: Tensor
    iteration: int = 0


@dataclass
class SamOutputs:
    probability: float
    weights: list[np.ndarray]      # one (L,) array per walk iteration
    sequential_op_count: int


@dataclass
class ModelParams:
    tables: EmbeddingTables
    attn: AttentionParams
    walk_gru: GruParams
    enhance_w: Tensor              # (d_i, d_i) transform on the refined state
    mem_gru: GruParams
    mlp: list[tuple[Tensor, Tensor]]
    head_w: Tensor
    head_b: Tensor

    def named(self):
        yield from self.tables.named()
        yield from self.attn.named()
        for prefix, gru in (("walk_gru", self.walk_gru), ("mem_gru", self.mem_gru)):
            for f in ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "b_r", "b_z", "b_h"):
                yield f"{prefix}.{f}", getattr(gru, f)
        yield "enhance.wu", self.enhance_w
        for i, (w, b) in enumerate(self.mlp):
            yield f"mlp.{i}.w", w
            yield f"mlp.{i}.b", b
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def zero_grads(self) -> None:
        for _, t in self.named():
            t.zero_grad()


def init_params(cfg: SamConfig, vocab: VocabConfig, seed: int) -> ModelParams:
    """All learnable tensors from one seeded generator, in a fixed order."""
    cfg.validate()
    vocab.validate()
    rng = np.random.default_rng(seed)
    d = cfg.d_i
    tables = init_tables(vocab, d, rng)

    def mat(rows, cols, name):
        bound = np.sqrt(6.0 / (rows + cols))
        return K.parameter(rng.uniform(-bound, bound, size=(rows, cols)), name)

    def vec(n, name):
        bound = np.sqrt(6.0 / (n + 1))
        return K.parameter(rng.uniform(-bound, bound, size=n), name)

    attn = AttentionParams(
        w1=mat(4 * d, cfg.d_h, "attn.w1"),
        b1=K.parameter(np.zeros(cfg.d_h), "attn.b1"),
        w2=vec(cfg.d_h, "attn.w2"),
        b2=K.parameter(np.zeros(()), "attn.b2"),
    )
    walk_gru = init_gru(d, d, rng, "walk_gru")
    enhance_w = mat(d, d, "enhance.wu")
    mem_gru = init_gru(2 * d, d, rng, "mem_gru")
    mlp = []
    in_dim = 2 * d + cfg.extra_dim
    for i, width in enumerate(cfg.mlp_layers):
        # Small positive bias keeps rectifier units off the kink (and alive)
        # when an upstream block is structurally zero.
        mlp.append((mat(width, in_dim, f"mlp.{i}.w"),
                    K.parameter(np.full(width, 0.01), f"mlp.{i}.b")))
        in_dim = width
    head_w = vec(in_dim, "head.w")
    head_b = K.parameter(np.zeros(()), "head.b")
    return ModelParams(tables, attn, walk_gru, enhance_w, mem_gru, mlp, head_w, head_b)


# ---------------------------------------------------------------------------
# Attention building blocks
# ---------------------------------------------------------------------------


def dual_query_features(e: Tensor, v_t: Tensor, m: Tensor) -> Tensor:
    """Tripartite interaction features [e - m || e - v || e * m || e * v].

    ``e`` may be a single row (d,), a sequence (L, d) or a batch
    (B, L, d); each query is (d,) or (B, d) accordingly.
    """
    if e.data.shape[-1] != v_t.data.shape[-1] or e.data.shape[-1] != m.data.shape[-1]:
        raise ShapeError(
            f"dual_query_features: widths differ, rows {e.data.shape}, "
            f"target {v_t.data.shape}, memory {m.data.shape}"
        )
    return K.concat_last([K.sub_q(e, m), K.sub_q(e, v_t), K.mul_q(e, m), K.mul_q(e, v_t)])


def attention_score(alpha: Tensor, p: AttentionParams) -> Tensor:
    """sigmoid(w2 . sigmoid(W1 alpha + b1) + b2), applied position-wise."""
    if alpha.data.shape[-1] != p.w1.data.shape[0]:
        raise ShapeError(
            f"attention_score: feature width {alpha.data.shape[-1]} != {p.w1.data.shape[0]}"
        )
    hidden = K.sigmoid(K.add_bcast(K.matmul(alpha, p.w1), p.b1))
    return K.sigmoid(K.add_bcast(K.matvec_last(hidden, p.w2), p.b2))


def pooled_interest(encoded: Tensor, weights: Tensor) -> Tensor:
    """Weighted-sum pooling of encoded rows; weights are used raw."""
    return K.pool_weighted(encoded, weights)


def iterative_memory_update(
    encoded: Tensor,
    v_t: Tensor,
    cfg: SamConfig,
    gru: GruParams,
    attn: AttentionParams,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, list[Tensor]]:
    """Walk the sequence num_walk_iters times, one GRU memory update each.

    The memory starts as the target embedding. Every iteration scores all
    rows against (target, memory), pools them, and feeds the pooled
    interest into the GRU. Returns the final memory and the per-iteration
    weights. An empty sequence short-circuits: the memory stays the target
    and no GRU step runs.
    """
    seq_axis = encoded.data.ndim - 2
    length = encoded.data.shape[seq_axis]
    if length == 0:
        return v_t, []
    per_iter: list[Tensor] = []
    if cfg.variant == "avg_pool":
        if mask is not None:
            lengths = mask.sum(axis=-1)
            uniform = mask / np.maximum(lengths, 1.0)[..., None]
        else:
            uniform = np.full(encoded.data.shape[:-1], 1.0 / length)
        w = K.constant(uniform)
        u = pooled_interest(encoded, w)
        m = v_t
        for _ in range(cfg.num_walk_iters):
            per_iter.append(w)
            m = gru_step(u, m, gru)
        return m, per_iter

    # The target-side features do not change across iterations; hoist them.
    if cfg.variant == "dot_product":
        target_scores = K.rowdot_q(encoded, v_t)
        inv_sqrt_d = 1.0 / np.sqrt(cfg.d_i)

        def weights_for(m: Tensor) -> Tensor:
            return K.sigmoid(K.scale(K.rowdot_q(encoded, m) + target_scores, inv_sqrt_d))
    else:
        ev_sub = K.sub_q(encoded, v_t)
        ev_mul = K.mul_q(encoded, v_t)

        def weights_for(m: Tensor) -> Tensor:
            alpha = K.concat_last([K.sub_q(encoded, m), ev_sub, K.mul_q(encoded, m), ev_mul])
            return attention_score(alpha, attn)

    def masked(w: Tensor) -> Tensor:
        return K.mul_arr(w, mask) if mask is not None else w

    if cfg.variant == "no_iterative_walk":
        # Single pass with the target as both queries; the pooled interest
        # feeds the head directly and the memory GRU never runs.
        w = masked(weights_for(v_t))
        per_iter.append(w)
        return pooled_interest(encoded, w), per_iter

    m = v_t
    for _ in range(cfg.num_walk_iters):
        w = masked(weights_for(m))
        per_iter.append(w)
        u = pooled_interest(encoded, w)
        m = gru_step(u, m, gru)
    return m, per_iter


def memory_enhance(m_n: Tensor, v_t: Tensor, steps: int, wu: Tensor, gru2: GruParams) -> Tensor:
    """Refine the memory with the target: t GRU steps on [Wu u || v]."""
    if gru2.input_dim != 2 * gru2.hidden_dim:
        raise ShapeError(
            f"memory_enhance: GRU input width {gru2.input_dim} must be twice hidden {gru2.hidden_dim}"
        )
    u = m_n
    for _ in range(steps):
        u = gru_step(K.concat_last([K.matmul(u, wu), v_t]), u, gru2)
    return u


def forward_batch(
    params: ModelParams,
    batch: SampleBatch,
    cfg: SamConfig,
) -> tuple[Tensor, list[Tensor]]:
    """Score a padded batch; returns probabilities (B,) and per-iter weights."""
    v_t = embed_target_batch(batch, params.tables)
    if batch.max_len == 0:
        m, per_iter = v_t, []
    else:
        encoded = encode_batch(batch, params.tables, cfg.use_ts_pos)
        m, per_iter = iterative_memory_update(
            encoded, v_t, cfg, params.walk_gru, params.attn, batch.mask
        )
        if (batch.lengths == 0).any():
            # Empty sequences keep the target as their memory.
            m = K.select_rows((batch.lengths > 0).astype(np.float64), m, v_t)
    u = memory_enhance(m, v_t, cfg.effective_mem_steps, params.enhance_w, params.mem_gru)
    pieces = [u, v_t]
    if cfg.extra_dim:
        if batch.extra is None or batch.extra.shape[1] != cfg.extra_dim:
            raise ConfigError(f"batch extra features missing or not (B, {cfg.extra_dim})")
        pieces.append(K.constant(batch.extra))
    h = K.concat_last(pieces)
    for w, b in params.mlp:
        h = K.relu(K.add_bcast(K.linear(h, w), b))
    logit = K.add_bcast(K.matvec_last(h, params.head_w), params.head_b)
    return K.sigmoid(logit), per_iter


def predict(
    seq,
    target,
    other_features: np.ndarray | None,
    params: ModelParams,
    cfg: SamConfig,
    vocab: VocabConfig,
) -> SamOutputs:
    """Score one (sequence, target) pair and report the walk internals."""

    class _One:
        label = None

        def __init__(self, sequence, tgt):
            self.sequence = sequence
            self.target = tgt

    batch = build_batch([_One(seq, target)], vocab, cfg.extra_dim)
    if other_features is not None and cfg.extra_dim:
        batch.extra = np.asarray(other_features, dtype=np.float64).reshape(1, cfg.extra_dim)
    meter = Meter()
    with meter:
        y, per_iter = forward_batch(params, batch, cfg)
    n = len(seq)
    weights = [np.array(w.data[0, :n]) for w in per_iter]
    return SamOutputs(float(y.data[0]), weights, meter.gru_steps)


def self_attention_score(encoded: np.ndarray) -> np.ndarray:
    """Single-head softmax self-attention with Q = K = V = encoded.

    Materializes the full L x L score matrix on purpose; this is the
    quadratic-memory foil for the scaling benchmark and is never trained.
    """
    if encoded.ndim != 2 or encoded.shape[0] < 1:
        raise ShapeError(f"self_attention_score: expected (L>=1, d), got {encoded.shape}")
    length, d = encoded.shape
    meter = current_meter()
    itemsize = encoded.dtype.itemsize

    def account(nbytes, flops):
        # Reserve before materializing so a budget overrun aborts cleanly.
        if meter is not None:
            meter.add_flops(flops)
            meter.alloc(nbytes)

    account(length * length * itemsize, 2 * length * length * d)
    scores = (encoded @ encoded.T) / np.sqrt(d)
    account(length * length * itemsize, 3 * length * length)
    shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
    account(length * length * itemsize, 2 * length * length)
    probs = shifted / shifted.sum(axis=1, keepdims=True)
    account(length * d * itemsize, 2 * length * length * d)
    return probs @ encoded
