"""Command-line entry point for reproducible runs.

Subcommands: ``gen`` (synthetic dataset), ``preprocess``, ``train``,
``gradcheck``, ``sweep``.  Exit codes are stable: 0 success, 2
configuration error, 3 data-format error, 4 numerical divergence (the
failing epoch is printed).  A ``gradcheck`` that runs but exceeds its
tolerance exits 1.  Every command writes a run manifest into its output
directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import pipelinecheck
from .attention import export_attention_map, save_attention_checkpoint
from .classifier import save_classifier_checkpoint
from .datasets import load_dataset, save_dataset
from .errors import ConfigError, DataFormatError, DivergenceError
from .manifest import RunManifest
from .preprocess import apply_pipeline, load_preprocess_spec
from .serialize import write_gten
from .synthetic import generate_synthetic, load_synthetic_spec, split_train_test
from .training import (config_kv, load_train_config, sweep, sweep_csv_text,
                       train)
from .config import load_kv_file

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _cmd_gen(args) -> int:
    spec = load_synthetic_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    batch, mask = generate_synthetic(spec)
    train_set, test_set = split_train_test(batch, 0.8, spec.seed)
    manifest = RunManifest("gen", load_kv_file(args.spec), spec.seed)
    manifest.add_artifacts(save_dataset(train_set, out / "train"))
    manifest.add_artifacts(save_dataset(test_set, out / "test"))
    mask_path = out / "mask.gten"
    write_gten(mask_path, mask)
    manifest.add_artifact(mask_path)
    manifest.write(out / "manifest.txt")
    print(f"wrote {train_set.n} train / {test_set.n} test images to {out}")
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    spec = load_preprocess_spec(args.spec)
    in_dir, out = Path(args.in_dir), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stems = [s for s in ("train", "test")
             if (in_dir / f"{s}.gten").exists()]
    if not stems:
        raise DataFormatError(f"no train.gten or test.gten under {in_dir}")
    manifest = RunManifest("preprocess", load_kv_file(args.spec), None)
    for stem in stems:
        batch = load_dataset(in_dir / stem)
        processed = apply_pipeline(spec, batch)
        manifest.add_artifacts(save_dataset(processed, out / stem))
    manifest.write(out / "manifest.txt")
    print(f"preprocessed {', '.join(stems)} into {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config)
    data_dir, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set = load_dataset(data_dir / "train")
    test_set = load_dataset(data_dir / "test")
    report = train(train_set, test_set, cfg)
    manifest = RunManifest("train", config_kv(cfg), cfg.seed)
    report_path = out / "report.csv"
    report.write_csv(report_path)
    manifest.add_artifact(report_path)
    for epoch, snap in sorted(report.snapshots.items()):
        manifest.add_artifacts(
            export_attention_map(snap, out / f"attention_epoch{epoch}"))
    attention, classifier = report.final_models
    attn_path, clf_path = out / "attention.ckpt", out / "classifier.ckpt"
    save_attention_checkpoint(attention, attn_path)
    save_classifier_checkpoint(classifier, clf_path)
    manifest.add_artifacts([attn_path, clf_path])
    manifest.write(out / "manifest.txt")
    last = report.rows[-1]
    print(f"trained {cfg.total_epochs} epochs: final train acc "
          f"{last.train_acc:.2f}%, test acc {last.test_acc:.2f}%")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    try:
        w_str, h_str = args.size.lower().split("x")
        width, height = int(w_str), int(h_str)
    except ValueError as exc:
        raise ConfigError(f"--size must look like 8x8, got {args.size!r}") from exc
    result = pipelinecheck.full_pipeline_gradcheck(
        width=width, height=height, images=args.images, seed=args.seed,
        channels=args.channels, corrupt=args.corrupt)
    for line in result.lines():
        print(line)
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def _cmd_sweep(args) -> int:
    cfg = load_train_config(args.config)
    grid = load_kv_file(args.grid, allowed_keys=("K", "lambda", "E"))
    missing = [k for k in ("K", "lambda", "E") if k not in grid]
    if missing:
        raise ConfigError(f"grid file missing keys: {', '.join(missing)}")
    try:
        k_values = [int(v) for v in grid["K"].split(",")]
        lambda_values = [float(v) for v in grid["lambda"].split(",")]
        e_values = [int(v) for v in grid["E"].split(",")]
    except ValueError as exc:
        raise ConfigError(f"invalid grid value: {exc}") from exc
    data_dir = Path(args.data)
    train_set = load_dataset(data_dir / "train")
    test_set = load_dataset(data_dir / "test")
    rows = sweep(train_set, test_set, cfg, k_values, lambda_values, e_values,
                 jobs=args.jobs)
    out_csv = Path(args.out)
    if out_csv.parent != Path(""):
        out_csv.parent.mkdir(parents=True, exist_ok=True)
    out_csv.write_text(sweep_csv_text(rows))
    manifest = RunManifest("sweep", {**config_kv(cfg), "grid.K": grid["K"],
                                     "grid.lambda": grid["lambda"],
                                     "grid.E": grid["E"]}, cfg.seed)
    manifest.add_artifact(out_csv)
    manifest.write(out_csv.with_name(out_csv.name + ".manifest.txt"))
    print(f"swept {len(rows)} cells into {out_csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="globalattn",
        description="Dataset-wide attention training at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="synthetic spec (key = value)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("preprocess", help="run the preprocessing pipeline")
    p.add_argument("--spec", required=True, help="preprocess spec (key = value)")
    p.add_argument("--in", dest="in_dir", required=True, help="input dataset dir")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train with the two-phase schedule")
    p.add_argument("--config", required=True, help="train config (key = value)")
    p.add_argument("--data", required=True, help="dataset dir with train/test")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gradcheck",
                       help="check all gradients against finite differences")
    p.add_argument("--size", default="8x8", help="image size WxH (max 16x16)")
    p.add_argument("--images", type=int, default=2, help="image count (max 4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=4,
                   help="hidden channels of the pixel classifier")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("sweep", help="grid-sweep K, lambda and E")
    p.add_argument("--config", required=True, help="base train config")
    p.add_argument("--grid", required=True, help="grid file (K/lambda/E lists)")
    p.add_argument("--data", required=True, help="dataset dir with train/test")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--jobs", type=int, default=1, help="parallel cells")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    entry()
