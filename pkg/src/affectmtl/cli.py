"""Command-line driver: synthesize data, train, evaluate, export curves.

Exit codes: 0 success, 1 usage error, 2 bad data or configuration,
3 training divergence.  The optional SSMTL_THREADS environment variable
caps augmentation worker threads (default: machine parallelism); results
are identical for any value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import (
    config_hash,
    dump_run_config,
    parse_run_config,
    parse_synth_config,
)
from .data_model import (
    dataset_stats,
    format_stats,
    generate_synthetic,
    load_images,
    load_manifest,
    write_dataset,
)
from .errors import ConfigError, DataError, DivergenceError
from .network import load_checkpoint, save_checkpoint
from .trainer import (
    evaluate_packed,
    format_epoch_log,
    pack_dataset,
    parse_epoch_log,
    run_training,
)


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _workers() -> int:
    value = os.environ.get("SSMTL_THREADS")
    if value is None:
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"SSMTL_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"SSMTL_THREADS must be >= 1, got {n}")
    return n


def _read_text(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _load_split(data_dir, manifest_name):
    dataset = load_manifest(os.path.join(data_dir, manifest_name))
    images = load_images(dataset, data_dir)
    return pack_dataset(dataset, images)


def cmd_synth(args) -> int:
    config = parse_synth_config(_read_text(args.config) if args.config else "")
    train_ds, train_images = generate_synthetic(config.train_config(), args.seed, prefix="train")
    val_ds, val_images = generate_synthetic(config.val_config(), args.seed + 1, prefix="val")
    write_dataset(args.out, "train.csv", train_ds, train_images)
    write_dataset(args.out, "val.csv", val_ds, val_images)
    print("train:")
    print(format_stats(dataset_stats(train_ds)))
    print("val:")
    print(format_stats(dataset_stats(val_ds)))
    return 0


def cmd_stats(args) -> int:
    dataset = load_manifest(args.manifest)
    print(format_stats(dataset_stats(dataset)))
    return 0


def cmd_train(args) -> int:
    run_config = parse_run_config(_read_text(args.config) if args.config else "")
    train_packed = _load_split(args.data, "train.csv")
    val_packed = _load_split(args.data, "val.csv")
    result = run_training(train_packed, val_packed, run_config, workers=_workers())
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "log.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_epoch_log(result.reports))
    with open(
        os.path.join(args.out, "config_resolved.txt"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        fh.write(dump_run_config(run_config))
    save_checkpoint(
        os.path.join(args.out, "checkpoint.npz"),
        result.best_params,
        result.model_config,
        config_hash(run_config),
    )
    if result.reports:
        best = result.reports[result.best_epoch].val_score
        print(f"best_epoch={result.best_epoch} val_p_mtl={best.p_mtl!r}")
    else:
        print("best_epoch=-1 val_p_mtl=nan")
    return 0


def cmd_evaluate(args) -> int:
    params, model_config, _ = load_checkpoint(args.checkpoint)
    packed = _load_split(args.data, args.manifest)
    if packed.images.shape[1:] != (model_config.image_height, model_config.image_width):
        raise DataError(
            f"images are {packed.images.shape[1:]} but the checkpoint expects "
            f"({model_config.image_height}, {model_config.image_width})"
        )
    score = evaluate_packed(params, packed)
    print(
        json.dumps(
            {
                "p_va": score.p_va,
                "p_exp": score.p_exp,
                "p_au": score.p_au,
                "p_mtl": score.p_mtl,
                "ccc_valence": score.ccc_valence,
                "ccc_arousal": score.ccc_arousal,
                "exp_f1": list(score.exp_f1),
                "au_f1": list(score.au_f1),
                "va_degenerate": score.va_degenerate,
            }
        )
    )
    return 0


CURVE_COLUMNS = (
    ["epoch", "l_exp_sup", "l_exp_unsup", "l_exp_cons", "l_au", "l_va", "l_exp",
     "l_total", "confident_fraction"]
    + [f"T{c}" for c in range(8)]
    + ["val_p_va", "val_p_exp", "val_p_au", "val_p_mtl"]
)


def cmd_curves(args) -> int:
    records = parse_epoch_log(_read_text(args.log))
    lines = [",".join(CURVE_COLUMNS)]
    for i, record in enumerate(records, start=1):
        thresholds = record["thresholds"]
        if len(thresholds) != 8:
            raise DataError(f"log record {i}: expected 8 thresholds, got {len(thresholds)}")
        row = (
            [str(record["epoch"])]
            + [
                repr(float(record[k]))
                for k in (
                    "l_exp_sup", "l_exp_unsup", "l_exp_cons", "l_au", "l_va",
                    "l_exp", "l_total", "confident_fraction",
                )
            ]
            + [repr(float(t)) for t in thresholds]
            + [
                repr(float(record[k]))
                for k in ("val_p_va", "val_p_exp", "val_p_au", "val_p_mtl")
            ]
        )
        lines.append(",".join(row))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="affectmtl", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", metavar="command")

    p = commands.add_parser("synth", help="generate a synthetic train/val pair")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="key=value generator config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser("stats", help="print annotation statistics of a manifest")
    p.add_argument("--manifest", required=True, help="manifest CSV path")
    p.set_defaults(func=cmd_stats)

    p = commands.add_parser("train", help="train on a data directory")
    p.add_argument("--data", required=True, help="directory with train.csv/val.csv")
    p.add_argument("--config", default=None, help="key=value run config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("evaluate", help="score a checkpoint on a manifest")
    p.add_argument("--data", required=True, help="directory with the manifest")
    p.add_argument("--checkpoint", required=True, help="checkpoint .npz path")
    p.add_argument("--manifest", default="val.csv", help="manifest name (default val.csv)")
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser("curves", help="flatten an epoch log into CSV")
    p.add_argument("--log", required=True, help="epoch log path (one JSON object per line)")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        print("affectmtl: error: a command is required", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"affectmtl: divergence: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"affectmtl: error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
