"""Command-line interface: synth / train / eval / bench / gradcheck.

Exit codes: 0 success, 2 flag or usage errors, 3 data errors (corpus or
checkpoint), 4 configuration errors, 5 numeric failures.

``SAM_THREADS`` caps the worker and BLAS thread count (default 1, which
also keeps contraction orders fixed for bit-reproducible runs).
"""
import os
import sys


def _configure_threads() -> None:
    n = os.environ.setdefault("SAM_THREADS", "1")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)


_configure_threads()  # must run before numpy loads its BLAS

import argparse  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .benchmark import VARIANT_BY_NAME, bench_scaling  # noqa: E402
from .data import (SynthSpec, generate_synthetic, infer_vocab, load_checkpoint,  # noqa: E402
                   model_config_echo, parse_corpus, restore_params, save_checkpoint,
                   write_corpus)
from .errors import (CheckpointError, ConfigError, CorpusError, SamError,  # noqa: E402
                     TrainingDiverged)
from .evaluation import auc, entropy_vs_iterations, score_corpus  # noqa: E402
from .model import SamConfig  # noqa: E402
from .training import TrainConfig, gradient_check, train, write_metrics_csv  # noqa: E402

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5

MODEL_NAMES = tuple(VARIANT_BY_NAME)


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on|off, got {text!r}")
    return text == "on"


def cmd_synth(args) -> int:
    spec = SynthSpec(
        vocab_size=args.vocab, group_count=args.groups, seq_len=args.seq_len,
        num_samples=args.samples, noise_ratio=args.noise, seed=args.seed, task=args.task,
        group_seed=args.group_seed,
    )
    corpus = generate_synthetic(spec)
    write_corpus(corpus, args.out)
    positives = sum(s.label for s in corpus)
    print(f"wrote {len(corpus)} samples ({positives} positives, vocab {args.vocab}) to {args.out}")
    return EXIT_OK


def _model_cfg_from_args(args) -> SamConfig:
    cfg = SamConfig(
        d_i=args.dim, d_h=args.hidden,
        num_walk_iters=args.iters, mem_steps=args.mem_steps,
        mlp_layers=tuple(_parse_int_list(args.mlp)),
        variant=VARIANT_BY_NAME[args.model] if hasattr(args, "model") else args.variant,
        use_ts_pos=getattr(args, "use_ts_pos", True),
    )
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    corpus = parse_corpus(args.data)
    model_cfg = _model_cfg_from_args(args)
    vocab = infer_vocab(corpus)
    train_cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
    )
    params, metrics = train(corpus, model_cfg, vocab, train_cfg, verbose=not args.quiet)
    if args.out_ckpt:
        save_checkpoint(params, model_config_echo(model_cfg, vocab, args.seed), args.out_ckpt)
    if args.out_metrics:
        write_metrics_csv(args.out_metrics, metrics, include_timing=args.timing)
    last = metrics[-1]
    print(f"trained {args.model} for {last.epoch} epochs: "
          f"loss {last.mean_loss:.6f} train_auc {last.train_auc:.5f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    tensors, echo = load_checkpoint(args.ckpt)
    params, cfg, vocab = restore_params(tensors, echo)
    corpus = parse_corpus(args.data)
    scores = score_corpus(params, cfg, corpus, vocab)
    labels = np.array([s.label for s in corpus], dtype=np.float64)
    try:
        value = auc(scores, labels)
    except ValueError as e:
        raise CorpusError(str(e)) from e
    trace = entropy_vs_iterations(params, cfg, corpus, vocab)
    if args.out:
        Path(args.out).write_text(trace.to_csv(), encoding="utf-8")
    shown = " ".join(f"{e:.4f}" for e in trace.mean_entropy)
    print(f"AUC {value:.6f}")
    print(f"entropy_per_iteration {shown}")
    return EXIT_OK


def cmd_bench(args) -> int:
    report = bench_scaling(
        variants=[v for v in args.variants.split(",") if v],
        seq_lens=_parse_int_list(args.seq_lens),
        dim=args.dim, repeats=args.repeats, seed=args.seed,
        budget_bytes=args.mem_budget_mb << 20,
    )
    text = report.to_csv()
    if args.out and args.out != "-":
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(report.rows)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = SamConfig(
        d_i=args.dim, d_h=args.hidden, num_walk_iters=args.iters,
        mem_steps=args.mem_steps, mlp_layers=tuple(_parse_int_list(args.mlp)),
        variant=args.variant,
    )
    report = gradient_check(cfg, seed=args.seed, tolerance=args.tol, seq_len=args.seq_len)
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck {status}: max_rel_err {report.max_rel_err:.3e} "
          f"(worst tensor {report.worst_tensor}, tol {report.tolerance:g})")
    for name, err in report.failing:
        print(f"  over tolerance: {name} rel_err {err:.3e}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sam",
        description="Sparse attentive memory network: data, training, eval, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--task", choices=("compositional", "pairwise"), default="compositional")
    p.add_argument("--vocab", type=int, default=1000)
    p.add_argument("--groups", type=int, default=50)
    p.add_argument("--seq-len", type=int, default=30)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--noise", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--group-seed", type=int, default=None,
                   help="fix the planted groups independently of --seed")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=MODEL_NAMES, default="sam")
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--mem-steps", type=int, default=3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--mlp", default="64,32")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--use-ts-pos", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--timing", type=_on_off, default=False, metavar="{on,off}",
                   help="write real wallclock to the metrics CSV (off keeps runs bit-identical)")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out-ckpt")
    p.add_argument("--out-metrics")
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a corpus with a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", help="entropy trace CSV path")
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="forward-pass scaling benchmark")
    p.add_argument("--variants", default="sam,selfattn",
                   help=f"comma list from {','.join(MODEL_NAMES)},selfattn")
    p.add_argument("--seq-lens", default="1024,2048,4096,8192,16384")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mem-budget-mb", type=int, default=4096)
    p.add_argument("--out", default="-", help="CSV path, or - for stdout")
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of end-to-end gradients")
    p.add_argument("--variant", choices=("full", "no_mem_enhance", "no_iterative_walk",
                                         "dot_product", "avg_pool"), default="full")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--mlp", default="8,4")
    p.add_argument("--seq-len", type=int, default=6)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--mem-steps", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _splice_config(argv: list[str]) -> list[str]:
    """Expand ``--config FILE`` into leading flags so real flags override."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv  # argparse will report the missing value
    path = argv[idx + 1]
    rest = argv[:idx] + argv[idx + 2:]
    pairs: list[str] = []
    try:
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config file {path}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            pairs.extend([f"--{key.strip()}", value.strip()])
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return rest[:1] + pairs + rest[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _splice_config(argv)
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (CorpusError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged,) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except SamError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
