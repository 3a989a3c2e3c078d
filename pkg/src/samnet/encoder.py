"""Behavior-sequence encoding: id/time/position embeddings summed per event.

Each clicked event carries four categorical ids (item, category, shop,
brand) and a timestamp. The encoded row for event j is

    e_j = [item || cate || shop || brand]  (+ time-bucket row + position row)

where the id embedding widths are equal quarters of ``d_i`` and the time
and position tables are full ``d_i`` wide so the three parts can be summed
element-wise. The target item is embedded through the same four id tables,
with no time or position terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import ConfigError, ShapeError
from .kernels import Tensor

MAX_TIME_BUCKET = 32  # covers roughly 136 years of elapsed seconds


@dataclass(frozen=True)
class BehaviorEvent:
    item_id: int
    cate_id: int
    shop_id: int
    brand_id: int
    ts: int

    def ids(self) -> tuple[int, int, int, int]:
        return (self.item_id, self.cate_id, self.shop_id, self.brand_id)


@dataclass
class BehaviorSequence:
    """Chronologically ordered events plus the scoring moment."""

    events: list[BehaviorEvent]
    rank_ts: int

    def __post_init__(self):
        prev = None
        for i, ev in enumerate(self.events):
            if prev is not None and ev.ts < prev:
                raise ConfigError(f"event {i}: timestamps must be non-decreasing ({ev.ts} < {prev})")
            if ev.ts > self.rank_ts:
                raise ConfigError(f"event {i}: ts {ev.ts} is after rank_ts {self.rank_ts}")
            prev = ev.ts

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class VocabConfig:
    item: int
    cate: int
    shop: int
    brand: int
    max_len: int
    max_time_bucket: int = MAX_TIME_BUCKET

    def validate(self) -> None:
        for name in ("item", "cate", "shop", "brand"):
            if getattr(self, name) < 1:
                raise ConfigError(f"vocab size for {name} must be >= 1")
        if self.max_len < 0:
            raise ConfigError("max_len must be >= 0")


@dataclass
class EmbeddingTables:
    """Lookup tables for the four id spaces plus time buckets and positions.

    Id sub-widths are equal quarters of d_i; time and position tables are
    d_i wide. The target item shares the four id tables with sequence items.
    """

    item: Tensor
    cate: Tensor
    shop: Tensor
    brand: Tensor
    time: Tensor
    pos: Tensor

    @property
    def d_i(self) -> int:
        return 4 * self.item.data.shape[1]

    def named(self):
        for name in ("item", "cate", "shop", "brand", "time", "pos"):
            yield f"emb.{name}", getattr(self, name)


def init_tables(vocab: VocabConfig, d_i: int, rng: np.random.Generator) -> EmbeddingTables:
    """Uniform [-0.05, 0.05] initialization from a seeded generator."""
    if d_i % 4 != 0:
        raise ConfigError(f"d_i must be divisible by 4, got {d_i}")
    sub = d_i // 4

    def table(rows, cols, name):
        return K.parameter(rng.uniform(-0.05, 0.05, size=(rows, cols)), f"emb.{name}")

    return EmbeddingTables(
        item=table(vocab.item, sub, "item"),
        cate=table(vocab.cate, sub, "cate"),
        shop=table(vocab.shop, sub, "shop"),
        brand=table(vocab.brand, sub, "brand"),
        time=table(vocab.max_time_bucket + 1, d_i, "time"),
        pos=table(vocab.max_len + 1, d_i, "pos"),
    )


def bucketize_time(elapsed_seconds: int, max_bucket: int = MAX_TIME_BUCKET) -> int:
    """Map elapsed seconds to the exponential interval it falls in.

    [0,1) -> 0, [1,2) -> 1, [2,4) -> 2, ..., [2^k, 2^{k+1}) -> k+1,
    clamped to ``max_bucket``.
    """
    if elapsed_seconds < 0:
        raise ConfigError(f"elapsed time must be non-negative, got {elapsed_seconds}")
    if elapsed_seconds < 1:
        return 0
    return min(int(elapsed_seconds).bit_length(), max_bucket)


def bucketize_time_array(elapsed: np.ndarray, max_bucket: int = MAX_TIME_BUCKET) -> np.ndarray:
    """Vectorized bucketize_time; exact for elapsed < 2**53."""
    if elapsed.size and elapsed.min() < 0:
        raise ConfigError(f"elapsed time must be non-negative, got {int(elapsed.min())}")
    # frexp exponent e of n in [2^(e-1), 2^e) equals floor(log2 n) + 1 exactly.
    _, exp = np.frexp(elapsed.astype(np.float64))
    return np.where(elapsed < 1, 0, np.minimum(exp, max_bucket)).astype(np.int64)


def position_index(j: int, length: int) -> int:
    """Chronological index (1-based) to position id: most recent event is 1."""
    if not 1 <= j <= length:
        raise ConfigError(f"position index {j} out of range for length {length}")
    return length - j + 1


@dataclass
class SampleBatch:
    """Padded id/position/time arrays for a batch of samples.

    Rows beyond a sample's true length are zero-padded and masked; the
    mask guarantees they contribute neither weight nor gradient.
    """

    item: np.ndarray       # (B, L) int
    cate: np.ndarray
    shop: np.ndarray
    brand: np.ndarray
    tbucket: np.ndarray    # (B, L) int
    posid: np.ndarray      # (B, L) int
    mask: np.ndarray       # (B, L) float, 1.0 on real rows
    lengths: np.ndarray    # (B,) int
    tgt_item: np.ndarray   # (B,) int
    tgt_cate: np.ndarray
    tgt_shop: np.ndarray
    tgt_brand: np.ndarray
    labels: np.ndarray | None = None   # (B,) float in {0, 1}
    extra: np.ndarray | None = None    # (B, extra_dim) float

    @property
    def size(self) -> int:
        return self.item.shape[0]

    @property
    def max_len(self) -> int:
        return self.item.shape[1]


def slice_batch(full: SampleBatch, idx: np.ndarray) -> SampleBatch:
    """Row-select a sub-batch (used for shuffled mini-batches)."""
    return SampleBatch(
        item=full.item[idx], cate=full.cate[idx], shop=full.shop[idx], brand=full.brand[idx],
        tbucket=full.tbucket[idx], posid=full.posid[idx], mask=full.mask[idx],
        lengths=full.lengths[idx],
        tgt_item=full.tgt_item[idx], tgt_cate=full.tgt_cate[idx],
        tgt_shop=full.tgt_shop[idx], tgt_brand=full.tgt_brand[idx],
        labels=None if full.labels is None else full.labels[idx],
        extra=None if full.extra is None else full.extra[idx],
    )


def _check_ids(ids: np.ndarray, vocab_size: int, what: str) -> None:
    if ids.size and ids.max() >= vocab_size:
        raise ConfigError(f"{what} {int(ids.max())} out of range for vocabulary of {vocab_size}")
    if ids.size and ids.min() < 0:
        raise ConfigError(f"{what} must be non-negative, got {int(ids.min())}")


def build_batch(samples, vocab: VocabConfig, extra_dim: int = 0) -> SampleBatch:
    """Assemble padded arrays from (label, target, sequence) samples.

    ``samples`` is a sequence of objects exposing ``label``, ``target``
    (a BehaviorEvent, ts ignored) and ``sequence`` (a BehaviorSequence).
    """
    b = len(samples)
    lengths = np.array([len(s.sequence) for s in samples], dtype=np.int64)
    lmax = int(lengths.max()) if b else 0
    if lmax > vocab.max_len:
        raise ConfigError(f"sequence length {lmax} exceeds configured max_len {vocab.max_len}")
    shape = (b, lmax)
    item = np.zeros(shape, dtype=np.int64)
    cate = np.zeros(shape, dtype=np.int64)
    shop = np.zeros(shape, dtype=np.int64)
    brand = np.zeros(shape, dtype=np.int64)
    tbucket = np.zeros(shape, dtype=np.int64)
    posid = np.zeros(shape, dtype=np.int64)
    mask = np.zeros(shape, dtype=np.float64)
    for i, s in enumerate(samples):
        n = lengths[i]
        for j, ev in enumerate(s.sequence.events):
            item[i, j], cate[i, j], shop[i, j], brand[i, j] = ev.ids()
            tbucket[i, j] = bucketize_time(s.sequence.rank_ts - ev.ts, vocab.max_time_bucket)
            posid[i, j] = n - j
        mask[i, :n] = 1.0
    _check_ids(item, vocab.item, "item id")
    _check_ids(cate, vocab.cate, "cate id")
    _check_ids(shop, vocab.shop, "shop id")
    _check_ids(brand, vocab.brand, "brand id")
    tgt = np.array([[s.target.item_id, s.target.cate_id, s.target.shop_id, s.target.brand_id]
                    for s in samples], dtype=np.int64).reshape(b, 4)
    _check_ids(tgt[:, 0], vocab.item, "target item id")
    _check_ids(tgt[:, 1], vocab.cate, "target cate id")
    _check_ids(tgt[:, 2], vocab.shop, "target shop id")
    _check_ids(tgt[:, 3], vocab.brand, "target brand id")
    labels = None
    if b and getattr(samples[0], "label", None) is not None:
        labels = np.array([float(s.label) for s in samples], dtype=np.float64)
    extra = np.zeros((b, extra_dim), dtype=np.float64) if extra_dim else None
    return SampleBatch(item, cate, shop, brand, tbucket, posid, mask, lengths,
                       tgt[:, 0], tgt[:, 1], tgt[:, 2], tgt[:, 3], labels, extra)


def encode_batch(batch: SampleBatch, tables: EmbeddingTables, use_ts_pos: bool) -> Tensor:
    """Encoded rows for every sample: (B, L, d_i).

    Padded rows carry garbage embeddings by construction; the batch mask
    zeroes their attention weight so they never reach the pooled output.
    """
    e_id = concat_id_lookup(tables, batch.item, batch.cate, batch.shop, batch.brand)
    if not use_ts_pos:
        return e_id
    e_t = K.gather(tables.time, batch.tbucket, "time bucket")
    e_p = K.gather(tables.pos, batch.posid, "position id")
    return e_id + e_t + e_p


def concat_id_lookup(tables: EmbeddingTables, item, cate, shop, brand) -> Tensor:
    return K.concat_last([
        K.gather(tables.item, item, "item id"),
        K.gather(tables.cate, cate, "cate id"),
        K.gather(tables.shop, shop, "shop id"),
        K.gather(tables.brand, brand, "brand id"),
    ])


def embed_target_batch(batch: SampleBatch, tables: EmbeddingTables) -> Tensor:
    """Target embeddings (B, d_i) through the shared id tables."""
    return concat_id_lookup(tables, batch.tgt_item, batch.tgt_cate, batch.tgt_shop, batch.tgt_brand)


def encode_sequence(seq: BehaviorSequence, tables: EmbeddingTables, use_ts_pos: bool = True) -> Tensor:
    """Encoded matrix (L, d_i) for a single behavior sequence."""
    n = len(seq)
    if n == 0:
        return K.constant(np.zeros((0, tables.d_i)))
    item = np.array([ev.item_id for ev in seq.events], dtype=np.int64)
    cate = np.array([ev.cate_id for ev in seq.events], dtype=np.int64)
    shop = np.array([ev.shop_id for ev in seq.events], dtype=np.int64)
    brand = np.array([ev.brand_id for ev in seq.events], dtype=np.int64)
    e_id = concat_id_lookup(tables, item, cate, shop, brand)
    if not use_ts_pos:
        return e_id
    elapsed = np.array([seq.rank_ts - ev.ts for ev in seq.events], dtype=np.int64)
    tbucket = bucketize_time_array(elapsed)
    posid = np.array([position_index(j + 1, n) for j in range(n)], dtype=np.int64)
    return e_id + K.gather(tables.time, tbucket, "time bucket") + K.gather(tables.pos, posid, "position id")


def embed_target(target: BehaviorEvent, tables: EmbeddingTables) -> Tensor:
    """Embedding vector (d_i,) for the item being scored; no time/position terms."""
    return concat_id_lookup(
        tables,
        np.int64(target.item_id), np.int64(target.cate_id),
        np.int64(target.shop_id), np.int64(target.brand_id),
    )
