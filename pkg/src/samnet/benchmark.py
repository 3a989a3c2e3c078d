"""Scaling benchmark: forward time, instrumented allocation, and FLOPs.

Runs untrained, randomly initialized models over synthetic sequences of
increasing length in a single thread. FLOPs and allocation counts come
from the kernel meter, so they are deterministic; wall time is measured
over several repeats after warm-up runs. The quadratic self-attention
scorer is included as a foil: past the allocation budget it is recorded
as an OOM row instead of crashing.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import BehaviorEvent, BehaviorSequence, VocabConfig, build_batch
from .errors import ConfigError, MemoryBudgetExceeded
from .instrument import Meter
from .model import SamConfig, forward_batch, init_params, self_attention_score

VARIANT_BY_NAME = {
    "sam": "full",
    "sam-nome": "no_mem_enhance",
    "din": "no_iterative_walk",
    "dotprod": "dot_product",
    "avgpool": "avg_pool",
}

DEFAULT_BUDGET_BYTES = 4 << 30

CSV_HEADER = "variant,L,forward_ms_mean,forward_ms_std,peak_bytes,flops"


@dataclass
class BenchRow:
    variant: str
    length: int
    forward_ms_mean: float
    forward_ms_std: float
    peak_bytes: int
    flops: int
    oom: bool = False

    def to_csv(self) -> str:
        if self.oom:
            return f"{self.variant},{self.length},OOM,OOM,{self.peak_bytes},{self.flops}"
        return (f"{self.variant},{self.length},{self.forward_ms_mean:.3f},"
                f"{self.forward_ms_std:.3f},{self.peak_bytes},{self.flops}")


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.to_csv() for r in self.rows]) + "\n"

    def row(self, variant: str, length: int) -> BenchRow:
        for r in self.rows:
            if r.variant == variant and r.length == length:
                return r
        raise KeyError(f"no bench row for ({variant}, {length})")


def _random_sample(length: int, vocab: VocabConfig, rng: np.random.Generator):
    rank = 1_000_000_000
    ts = np.sort(rng.integers(0, rank, size=length))
    events = [
        BehaviorEvent(
            int(rng.integers(vocab.item)), int(rng.integers(vocab.cate)),
            int(rng.integers(vocab.shop)), int(rng.integers(vocab.brand)), int(t),
        )
        for t in ts
    ]
    target = BehaviorEvent(
        int(rng.integers(vocab.item)), int(rng.integers(vocab.cate)),
        int(rng.integers(vocab.shop)), int(rng.integers(vocab.brand)), 0,
    )

    class _S:
        label = None

        def __init__(self):
            self.sequence = BehaviorSequence(events, rank)
            self.target = target

    return _S()


def flag_inversions(report: BenchReport) -> list[str]:
    """Mean forward time should not decrease as L grows; inversions are
    flagged (timer noise), never treated as failures."""
    flags = []
    by_variant: dict[str, list[BenchRow]] = {}
    for r in report.rows:
        if not r.oom:
            by_variant.setdefault(r.variant, []).append(r)
    for variant, rows in by_variant.items():
        rows = sorted(rows, key=lambda r: r.length)
        for a, b in zip(rows, rows[1:]):
            if b.forward_ms_mean < a.forward_ms_mean:
                flags.append(
                    f"{variant}: forward_ms_mean dipped from {a.forward_ms_mean:.3f} (L={a.length}) "
                    f"to {b.forward_ms_mean:.3f} (L={b.length})"
                )
    return flags


def bench_scaling(
    variants: list[str],
    seq_lens: list[int],
    dim: int = 16,
    repeats: int = 5,
    seed: int = 0,
    budget_bytes: int = DEFAULT_BUDGET_BYTES,
    warmup: int = 2,
    mem_steps: int = 3,
    walk_iters: int = 3,
) -> BenchReport:
    if repeats < 5:
        raise ConfigError(f"bench requires repeats >= 5, got {repeats}")
    if not seq_lens or min(seq_lens) < 1:
        raise ConfigError("seq_lens must be positive")
    for v in variants:
        if v != "selfattn" and v not in VARIANT_BY_NAME:
            raise ConfigError(f"unknown bench variant {v!r}")
    rng = np.random.default_rng(seed)
    vocab = VocabConfig(item=1000, cate=100, shop=50, brand=50, max_len=max(seq_lens))
    report = BenchReport()
    for variant in variants:
        if variant == "selfattn":
            runner_by_len = {
                L: (lambda E: (lambda: self_attention_score(E)))(rng.normal(size=(L, dim)))
                for L in seq_lens
            }
        else:
            cfg = SamConfig(d_i=dim, d_h=2 * dim, num_walk_iters=walk_iters,
                            mem_steps=mem_steps, variant=VARIANT_BY_NAME[variant])
            params = init_params(cfg, vocab, seed)
            runner_by_len = {}
            for L in seq_lens:
                batch = build_batch([_random_sample(L, vocab, rng)], vocab)
                runner_by_len[L] = (lambda b: (lambda: forward_batch(params, b, cfg)))(batch)
        for L in seq_lens:
            run = runner_by_len[L]
            meter = Meter(budget_bytes=budget_bytes)
            try:
                with meter:
                    run()
            except (MemoryBudgetExceeded, MemoryError):
                report.rows.append(BenchRow(variant, L, float("nan"), float("nan"),
                                            meter.peak_bytes, meter.flops, oom=True))
                continue
            times = []
            for _ in range(warmup):
                run()
            for _ in range(repeats):
                t0 = time.perf_counter()
                run()
                times.append((time.perf_counter() - t0) * 1e3)
            arr = np.array(times)
            report.rows.append(BenchRow(variant, L, float(arr.mean()), float(arr.std()),
                                        meter.peak_bytes, meter.flops))
    report.warnings = flag_inversions(report)
    return report
