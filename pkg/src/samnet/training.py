"""Cross-entropy training with Adam, plus the finite-difference harness.

Everything here is deterministic given (seed, corpus, configs): parameter
creation order is fixed, batches come from one seeded generator, and every
kernel uses a fixed summation order, so two identical runs produce
bitwise-identical parameter trajectories.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .encoder import SampleBatch, VocabConfig, build_batch, slice_batch
from .errors import ConfigError, TrainingDiverged
from .evaluation import auc
from .kernels import Tape, backward
from .model import ModelParams, SamConfig, forward_batch, init_params


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.named()},
            v={name: np.zeros_like(t.data) for name, t in params.named()},
        )


def bce_loss(y_hat: K.Tensor, y: np.ndarray) -> K.Tensor:
    """Mean binary cross entropy over a batch; see kernels.bce_mean."""
    return K.bce_mean(y_hat, np.asarray(y, dtype=np.float64))


def adam_step(params: ModelParams, state: AdamState, cfg: TrainConfig) -> None:
    """Standard bias-corrected Adam update, dense over every tensor."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in params.named():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    train_auc: float
    wallclock_s: float


def train(
    corpus,
    model_cfg: SamConfig,
    vocab: VocabConfig,
    train_cfg: TrainConfig,
    params: ModelParams | None = None,
    verbose: bool = False,
) -> tuple[ModelParams, list[EpochMetrics]]:
    """Train over seeded, shuffled mini-batches; returns params and metrics.

    The per-epoch training AUC is computed from the scores each sample
    received when its batch was visited.
    """
    if not corpus:
        raise ConfigError("training corpus is empty")
    model_cfg.validate()
    train_cfg.validate()
    if params is None:
        params = init_params(model_cfg, vocab, train_cfg.seed)
    full = build_batch(corpus, vocab, model_cfg.extra_dim)
    if full.labels is None:
        raise ConfigError("training corpus has no labels")
    n = full.size
    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState.for_params(params)
    metrics: list[EpochMetrics] = []
    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        scores = np.empty(n)
        labels = np.empty(n)
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start:start + train_cfg.batch_size]
            batch = slice_batch(full, idx)
            params.zero_grads()
            with Tape() as tape:
                y, _ = forward_batch(params, batch, model_cfg)
                loss = bce_loss(y, batch.labels)
                lval = float(loss.data)
                if not np.isfinite(lval):
                    raise TrainingDiverged(
                        f"non-finite loss {lval} at epoch {epoch}, batch offset {start}"
                    )
                backward(tape, loss)
            adam_step(params, state, train_cfg)
            scores[start:start + len(idx)] = y.data
            labels[start:start + len(idx)] = batch.labels
            loss_sum += lval * len(idx)
        try:
            epoch_auc = auc(scores, labels)
        except ValueError:
            epoch_auc = float("nan")
        wall = time.perf_counter() - t0
        metrics.append(EpochMetrics(epoch, loss_sum / n, epoch_auc, wall))
        if verbose:
            print(f"epoch {epoch}: loss {loss_sum / n:.6f} auc {epoch_auc:.5f} ({wall:.1f}s)")
    return params, metrics


def write_metrics_csv(path, metrics: list[EpochMetrics], include_timing: bool = False) -> None:
    """One row per epoch. Timing is off by default so the file is
    bit-reproducible across runs; pass include_timing=True for real times."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,mean_loss,train_auc,wallclock_s\n")
        for m in metrics:
            wall = f"{m.wallclock_s:.3f}" if include_timing else "0.000"
            f.write(f"{m.epoch},{m.mean_loss!r},{m.train_auc!r},{wall}\n")


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------

FD_STEP = 1e-6
REL_FLOOR = 1e-4  # noise floor: below this magnitude, compare absolutely


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_tensor: str
    tolerance: float
    failing: list[tuple[str, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _toy_corpus(seq_len: int, batch_size: int, vocab: VocabConfig, seed: int):
    from .encoder import BehaviorEvent, BehaviorSequence

    rng = np.random.default_rng(seed)

    class _S:
        def __init__(self, label, target, sequence):
            self.label = label
            self.target = target
            self.sequence = sequence

    samples = []
    for i in range(batch_size):
        length = seq_len if i == 0 else int(rng.integers(0, seq_len + 1))
        rank = 10_000
        ts = np.sort(rng.integers(0, 9_000, size=length))
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
        samples.append(_S(i % 2, target, BehaviorSequence(events, rank)))
    return samples


def gradient_check(
    model_cfg: SamConfig,
    seed: int,
    tolerance: float,
    seq_len: int = 6,
    batch_size: int = 2,
) -> GradCheckReport:
    """Compare end-to-end analytic gradients against central differences.

    Uses a tiny seeded corpus (mixed sequence lengths, both labels) and
    perturbs every entry of every parameter tensor. Intended for small
    configurations only; cost grows with the parameter count.
    """
    model_cfg.validate()
    vocab = VocabConfig(item=12, cate=6, shop=5, brand=5, max_len=max(seq_len, 1))
    params = init_params(model_cfg, vocab, seed)
    batch = build_batch(_toy_corpus(seq_len, batch_size, vocab, seed), vocab, model_cfg.extra_dim)

    def loss_value() -> float:
        y, _ = forward_batch(params, batch, model_cfg)
        return float(K.bce_mean(y, batch.labels).data)

    params.zero_grads()
    with Tape() as tape:
        y, _ = forward_batch(params, batch, model_cfg)
        loss = K.bce_mean(y, batch.labels)
        backward(tape, loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.named()}

    max_err, worst = 0.0, ""
    failing: list[tuple[str, float]] = []
    for name, t in params.named():
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            up = loss_value()
            flat[i] = orig - FD_STEP
            down = loss_value()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * FD_STEP)
        err = relative_error(analytic[name].reshape(-1), numeric)
        if err > max_err:
            max_err, worst = err, name
        if err > tolerance:
            failing.append((name, err))
    return GradCheckReport(max_err, worst, tolerance, failing)
