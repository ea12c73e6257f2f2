"""Command line front end: dataset generation, training, tuning, eval, suite.

Every command is deterministic in its arguments; rerunning with the same
flags reproduces output files byte for byte.
"""

import argparse
import sys
from pathlib import Path

from .errors import BetasegError, ConfigError
from .harness import (DEFAULT_BETA_GRID, NOISE_PRESETS, TrainConfig, evaluate,
                      parse_suite_config, run_suite, train, tune_beta,
                      tune_table_csv)
from .losses import LossConfig, LossKind
from .metrics import render_comparison_table
from .network import NetworkSpec
from .phantom import NoiseSpec, PhantomSpec, build_dataset, write_dataset


def _parse_float_list(text: str) -> list:
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e
    return values


def _parse_int_list(text: str) -> list:
    try:
        values = [int(part) for part in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e
    return values


def _cmd_phantom_gen(args) -> None:
    pairs, band = NOISE_PRESETS[args.noise_preset]
    spec = PhantomSpec(resolution=(args.resolution, args.resolution), seed=args.seed)
    noise = NoiseSpec(swap_pairs=pairs, band_width=band, seed=args.seed)
    dataset = build_dataset(args.count, spec, noise, seed=args.seed)
    write_dataset(dataset, args.out)
    print(f"wrote {args.count} samples at {args.resolution}x{args.resolution} "
          f"to {args.out}")


def _cmd_train(args) -> None:
    loss = LossConfig(kind=LossKind(args.loss), beta=args.beta)
    config = TrainConfig(data_dir=args.data, network=NetworkSpec(seed=args.seed),
                         loss=loss, epochs=args.epochs, warmup_epochs=args.warmup,
                         seed=args.seed, label_source=args.labels)
    _, log = train(config, checkpoint_path=args.out, log_path=args.log)
    if log.records:
        last = log.records[-1]
        print(f"epoch {last.epoch}: train_loss {last.train_loss:.6f}, "
              f"val_mean_dice {last.val_mean_dice:.4f}")
    print(f"checkpoint written to {args.out}")


def _cmd_tune_beta(args) -> None:
    grid = _parse_float_list(args.grid)
    config = TrainConfig(data_dir=args.data, network=NetworkSpec(seed=args.seed),
                         seed=args.seed)
    best_beta, rows = tune_beta(config, grid)
    Path(args.out).write_text(tune_table_csv(rows))
    print(f"best beta: {best_beta!r}")


def _cmd_eval(args) -> None:
    report = evaluate(args.ckpt, args.data, args.split)
    text, csv_text = render_comparison_table([report])
    Path(args.out).write_text(csv_text)
    print(text, end="")


def _cmd_suite(args) -> None:
    config = parse_suite_config(args.data_config)
    seeds = _parse_int_list(args.seeds)
    run_suite(config, seeds, args.out)
    print((Path(args.out) / "comparison.txt").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="betaseg",
        description="Noisy-label-robust segmentation experiments on synthetic "
                    "head phantoms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="generate a phantom dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--resolution", type=int, default=64, help="square image size")
    p.add_argument("--noise-preset", default="default", choices=sorted(NOISE_PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_phantom_gen)

    p = sub.add_parser("train", help="train one model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--loss", default="ce", choices=[k.value for k in LossKind])
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--labels", default="noisy", choices=["clean", "noisy"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="per-epoch log CSV path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("tune-beta", help="grid-search beta on validation Dice")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--grid", default=",".join(repr(b) for b in DEFAULT_BETA_GRID))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="per-beta table CSV path")
    p.set_defaults(func=_cmd_tune_beta)

    p = sub.add_parser("eval", help="score a checkpoint against clean labels")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("suite", help="run the full multi-seed comparison suite")
    p.add_argument("--data-config", required=True, dest="data_config",
                   help="key=value config file")
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_suite)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except BetasegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
