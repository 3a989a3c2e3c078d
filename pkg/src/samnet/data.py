"""Corpus file format, synthetic task generators, and checkpointing.

Corpus TSV, one sample per line, UTF-8, four tab-separated fields:

    label<TAB>item:cate:shop:brand<TAB>ev1,ev2,...,evL<TAB>rank_ts

where each event is ``item:cate:shop:brand:ts`` with base-10 non-negative
integers and events in chronological order. An empty third field is an
empty sequence.

Checkpoints are little-endian binary: magic ``SAMCKPT1``, a u32 format
version, a length-prefixed JSON config echo, then named tensor records
(u16 name length + name, u8 rank, u32 dims, row-major float32 data).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .encoder import BehaviorEvent, BehaviorSequence, VocabConfig
from .errors import CheckpointError, ConfigError, CorpusError
from .model import ModelParams, SamConfig, init_params

CKPT_MAGIC = b"SAMCKPT1"
CKPT_VERSION = 1

SYNTH_TASKS = ("pairwise", "compositional")


@dataclass
class Sample:
    label: int
    target: BehaviorEvent          # ts field unused for targets
    sequence: BehaviorSequence
    line: int | None = None

    @property
    def rank_ts(self) -> int:
        return self.sequence.rank_ts


# ---------------------------------------------------------------------------
# Corpus TSV
# ---------------------------------------------------------------------------


def _parse_int(text: str, what: str, line: int, column: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise CorpusError(f"{what}: expected a base-10 integer, got {text!r}", line, column)
    if value < 0:
        raise CorpusError(f"{what}: must be non-negative, got {value}", line, column)
    return value


def parse_sample_line(line: str, lineno: int) -> Sample:
    fields = line.split("\t")
    if len(fields) != 4:
        raise CorpusError(f"expected 4 tab-separated fields, got {len(fields)}", lineno)
    label = _parse_int(fields[0], "label", lineno, 1)
    if label not in (0, 1):
        raise CorpusError(f"label must be 0 or 1, got {label}", lineno, 1)
    tparts = fields[1].split(":")
    if len(tparts) != 4:
        raise CorpusError(f"target: expected item:cate:shop:brand, got {fields[1]!r}", lineno, 2)
    target = BehaviorEvent(*(_parse_int(p, "target id", lineno, 2) for p in tparts), ts=0)
    rank_ts = _parse_int(fields[3], "rank_ts", lineno, 4)
    events = []
    if fields[2]:
        prev_ts = None
        for k, ev_text in enumerate(fields[2].split(",")):
            parts = ev_text.split(":")
            if len(parts) != 5:
                raise CorpusError(
                    f"event {k + 1}: expected item:cate:shop:brand:ts, got {ev_text!r}", lineno, 3)
            nums = [_parse_int(p, f"event {k + 1}", lineno, 3) for p in parts]
            ev = BehaviorEvent(*nums)
            if prev_ts is not None and ev.ts < prev_ts:
                raise CorpusError(
                    f"event {k + 1}: timestamps must be non-decreasing ({ev.ts} < {prev_ts})",
                    lineno, 3)
            if ev.ts > rank_ts:
                raise CorpusError(
                    f"event {k + 1}: ts {ev.ts} is after rank_ts {rank_ts}", lineno, 3)
            prev_ts = ev.ts
            events.append(ev)
    return Sample(label, target, BehaviorSequence(events, rank_ts), line=lineno)


def parse_corpus(path) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line:
                raise CorpusError("blank line", lineno)
            samples.append(parse_sample_line(line, lineno))
    return samples


def sample_to_line(s: Sample) -> str:
    tgt = f"{s.target.item_id}:{s.target.cate_id}:{s.target.shop_id}:{s.target.brand_id}"
    evs = ",".join(
        f"{e.item_id}:{e.cate_id}:{e.shop_id}:{e.brand_id}:{e.ts}" for e in s.sequence.events
    )
    return f"{s.label}\t{tgt}\t{evs}\t{s.rank_ts}"


def write_corpus(samples, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for s in samples:
            f.write(sample_to_line(s) + "\n")


def infer_vocab(samples, max_len: int | None = None) -> VocabConfig:
    """Vocabulary sizes and max length implied by a corpus."""
    hi = {"item": 0, "cate": 0, "shop": 0, "brand": 0}
    longest = 0
    for s in samples:
        longest = max(longest, len(s.sequence))
        for ev in list(s.sequence.events) + [s.target]:
            hi["item"] = max(hi["item"], ev.item_id)
            hi["cate"] = max(hi["cate"], ev.cate_id)
            hi["shop"] = max(hi["shop"], ev.shop_id)
            hi["brand"] = max(hi["brand"], ev.brand_id)
    return VocabConfig(
        item=hi["item"] + 1, cate=hi["cate"] + 1, shop=hi["shop"] + 1, brand=hi["brand"] + 1,
        max_len=max_len if max_len is not None else longest,
    )


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Planted-pattern corpus around item groups (x, y, z).

    ``compositional``: z is the target; positives contain both x and y,
    negatives exactly one of them (uniform choice), so the label is a
    function of joint presence and no single item decides it.
    ``pairwise``: control task; positives contain the partner item,
    negatives none, solvable by target attention alone.

    ``noise_ratio`` is the fraction of each sequence drawn uniformly from
    the non-group vocabulary; the remaining slots repeat the signal items.

    ``group_seed`` fixes the group layout independently of the sample
    stream, so train and test corpora generated with different ``seed``
    values can share one planted vocabulary structure. It defaults to
    ``seed``.
    """

    vocab_size: int
    group_count: int
    seq_len: int
    num_samples: int
    noise_ratio: float = 0.9
    seed: int = 0
    task: str = "compositional"
    group_seed: int | None = None

    def validate(self) -> None:
        if self.task not in SYNTH_TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {SYNTH_TASKS}")
        if 3 * self.group_count > self.vocab_size:
            raise ConfigError(
                f"need 3 * groups <= vocab ({3 * self.group_count} > {self.vocab_size})")
        if self.group_count < 1 or self.num_samples < 1:
            raise ConfigError("group_count and num_samples must be >= 1")
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ConfigError(f"noise_ratio must be in [0, 1], got {self.noise_ratio}")
        n_noise = round(self.noise_ratio * self.seq_len)
        min_signal = 2 if self.task == "compositional" else 1
        if self.seq_len - n_noise < min_signal:
            raise ConfigError(
                f"noise_ratio {self.noise_ratio} leaves {self.seq_len - n_noise} signal slots; "
                f"the {self.task} task needs at least {min_signal}")
        if n_noise > 0 and self.vocab_size <= 3:
            raise ConfigError("no non-group items left to draw noise from")


def _derived_vocabs(v: int) -> tuple[int, int, int]:
    return max(2, v // 10), max(2, v // 16), max(2, v // 20)


def generate_synthetic(spec: SynthSpec) -> list[Sample]:
    """Deterministic corpus from the spec's seed; labels balanced 1:1."""
    spec.validate()
    gseed = spec.seed if spec.group_seed is None else spec.group_seed
    groups = np.random.default_rng(gseed).permutation(spec.vocab_size)[
        : 3 * spec.group_count].reshape(-1, 3)
    rng = np.random.default_rng(spec.seed)
    # Noise is anything outside the sample's own group, so other groups'
    # signal items appear as distractors and single-item statistics stay
    # crowded; a sample's own partners never appear as noise.
    noise_pool = {
        g: np.setdiff1d(np.arange(spec.vocab_size), groups[g])
        for g in range(spec.group_count)
    }
    n_noise = round(spec.noise_ratio * spec.seq_len)
    n_signal = spec.seq_len - n_noise
    n_pos = spec.num_samples // 2
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64),
                             np.zeros(spec.num_samples - n_pos, dtype=np.int64)])
    labels = labels[rng.permutation(spec.num_samples)]
    cate_v, shop_v, brand_v = _derived_vocabs(spec.vocab_size)

    def event(item: int, ts: int) -> BehaviorEvent:
        return BehaviorEvent(item, item % cate_v, item % shop_v, item % brand_v, ts)

    samples = []
    for i in range(spec.num_samples):
        g = int(rng.integers(spec.group_count))
        x, y, z = (int(v) for v in groups[g])
        label = int(labels[i])
        if spec.task == "compositional":
            if label == 1:
                extra = [x if int(b) == 0 else y for b in rng.integers(2, size=n_signal - 2)]
                signal = [x, y] + extra
            else:
                partner = x if int(rng.integers(2)) == 0 else y
                signal = [partner] * n_signal
        else:
            partner = x
            signal = [partner] * n_signal if label == 1 else []
        n_fill = spec.seq_len - len(signal)
        pool = noise_pool[g]
        noise = pool[rng.integers(len(pool), size=n_fill)]
        items = np.concatenate([np.array(signal, dtype=np.int64), noise])
        items = items[rng.permutation(spec.seq_len)]
        rank_ts = 1_700_000_000 + i
        offsets = np.sort(rng.integers(1, 1 << 20, size=spec.seq_len))[::-1]
        events = [event(int(it), rank_ts - int(off)) for it, off in zip(items, offsets)]
        samples.append(Sample(label, BehaviorEvent(z, z % cate_v, z % shop_v, z % brand_v, 0),
                              BehaviorSequence(events, rank_ts)))
    return samples


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def model_config_echo(cfg: SamConfig, vocab: VocabConfig, seed: int) -> dict:
    return {
        "d_i": cfg.d_i, "d_h": cfg.d_h,
        "num_walk_iters": cfg.num_walk_iters, "mem_steps": cfg.mem_steps,
        "mlp_layers": list(cfg.mlp_layers), "variant": cfg.variant,
        "use_ts_pos": cfg.use_ts_pos, "extra_dim": cfg.extra_dim,
        "vocab": {"item": vocab.item, "cate": vocab.cate, "shop": vocab.shop,
                  "brand": vocab.brand, "max_len": vocab.max_len,
                  "max_time_bucket": vocab.max_time_bucket},
        "seed": seed,
    }


def config_from_echo(echo: dict) -> tuple[SamConfig, VocabConfig, int]:
    cfg = SamConfig(
        d_i=echo["d_i"], d_h=echo["d_h"], num_walk_iters=echo["num_walk_iters"],
        mem_steps=echo["mem_steps"], mlp_layers=tuple(echo["mlp_layers"]),
        variant=echo["variant"], use_ts_pos=echo["use_ts_pos"], extra_dim=echo["extra_dim"],
    )
    v = echo["vocab"]
    vocab = VocabConfig(item=v["item"], cate=v["cate"], shop=v["shop"], brand=v["brand"],
                        max_len=v["max_len"], max_time_bucket=v["max_time_bucket"])
    return cfg, vocab, echo.get("seed", 0)


def save_checkpoint(params: ModelParams, config_echo: dict, path) -> None:
    blob = json.dumps(config_echo, sort_keys=True).encode("utf-8")
    named = list(params.named())
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(named)))
        for name, t in named:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            # asarray keeps scalars 0-d; tobytes always emits row-major
            arr = np.asarray(t.data, dtype="<f4")
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read tensors (as float64 arrays holding float32 values) and the config echo."""
    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(len(CKPT_MAGIC), "magic") != CKPT_MAGIC:
        raise CheckpointError(f"bad magic; {path} is not a checkpoint")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {CKPT_VERSION}")
    blob_len = struct.unpack("<I", take(4, "config length"))[0]
    echo = json.loads(take(blob_len, "config echo").decode("utf-8"))
    count = struct.unpack("<I", take(4, "tensor count"))[0]
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = struct.unpack("<H", take(2, f"tensor {i} name length"))[0]
        name = take(name_len, f"tensor {i} name").decode("utf-8")
        rank = struct.unpack("<B", take(1, f"tensor '{name}' rank"))[0]
        dims = tuple(struct.unpack("<I", take(4, f"tensor '{name}' dims"))[0] for _ in range(rank))
        n_vals = int(np.prod(dims)) if dims else 1
        raw = take(4 * n_vals, f"tensor '{name}' data")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after the last tensor record")
    return tensors, echo


def restore_params(tensors: dict[str, np.ndarray], echo: dict) -> tuple[ModelParams, SamConfig, VocabConfig]:
    """Rebuild a parameter set from checkpoint tensors; names must match exactly."""
    cfg, vocab, seed = config_from_echo(echo)
    params = init_params(cfg, vocab, seed)
    expected = dict(params.named())
    unknown = set(tensors) - set(expected)
    missing = set(expected) - set(tensors)
    if unknown:
        raise CheckpointError(f"unknown tensor name(s) in checkpoint: {sorted(unknown)}")
    if missing:
        raise CheckpointError(f"checkpoint is missing tensor(s): {sorted(missing)}")
    for name, arr in tensors.items():
        if expected[name].data.shape != arr.shape:
            raise CheckpointError(
                f"tensor '{name}': checkpoint shape {arr.shape} != model shape "
                f"{expected[name].data.shape}")
        expected[name].data = arr
    return params, cfg, vocab
