"""Command-line driver: gen-data, train, eval, infer, verify, attention-dump."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, load_config
from .data import generate_dataset, load_manifest, load_stack
from .decoder import predict_depth
from .imageio import write_pfm, write_png_visualization
from .metrics import METRIC_COLUMNS
from .optics import StackValidationError
from .train import Trainer, TrainingDiverged, frame_sweep, load_model, predict

log = logging.getLogger("depthfocus")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag in ("no_lstm", "constant_kernel", "no_depth_conv"):
        if getattr(args, flag, False):
            overrides.append(f"model.{flag}=true")
    return load_config(args.config, overrides)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    count = args.count if args.count is not None else cfg.train_count
    manifest = generate_dataset(args.out, count, cfg.seed, cfg.stack_size, cfg.image_size, cfg.camera,
                                cfg.z_min, cfg.z_max, cfg.model.encoder.patch_size)
    print(f"wrote {len(manifest.stacks)} stacks of {cfg.stack_size} frames to {manifest.root}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    samples = load_manifest(args.data).load(args.limit)
    if args.resume:
        trainer = Trainer.load(args.resume)
    else:
        trainer = Trainer.create(cfg)
    steps = args.steps if args.steps is not None else trainer.config.steps
    try:
        trainer.fit(samples, steps)
    except TrainingDiverged as exc:
        print(f"training diverged at step {exc.step}: {exc}", file=sys.stderr)
        return 3
    trainer.save(args.out)
    print(f"step {trainer.step} loss {trainer.losses[-1]:.6g} -> {args.out}")
    return 0


def _parse_ks(text: str) -> list[int]:
    try:
        return [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise UsageError(f"--frames must be a comma-separated list of integers, got {text!r}") from None


def cmd_eval(args) -> int:
    model, cfg = load_model(args.checkpoint)
    samples = load_manifest(args.data).load(args.limit)
    n = min(len(s.stack) for s in samples)
    ks = _parse_ks(args.frames) if args.frames else [n]
    bad = [k for k in ks if not 1 <= k <= n]
    if bad:
        raise UsageError(f"frames_k {bad} outside [1, {n}]")
    space = args.space or cfg.eval_space
    table = frame_sweep(model, samples, ks, space)
    rows = [[k] + [repr(v) for v in table[k].as_row()] for k in ks]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["frames_k", *METRIC_COLUMNS])
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def cmd_infer(args) -> int:
    model, _ = load_model(args.checkpoint)
    sample = load_stack(args.stack)
    disparity = predict(model, sample.stack.frames)
    depth = predict_depth(disparity, sample.stack.camera)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "disparity.pfm", disparity)
    write_pfm(out / "depth.pfm", depth)
    write_png_visualization(out / "disparity.png", disparity)
    print(f"{len(sample.stack)} frames -> {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import all_checks, run_checks

    results = run_checks(all_checks(include_graph=not args.quick), echo=print)
    failed = [r for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {total:.1f}s")
    for r in failed:
        print(f"FAILED {r.module}: {r.name}: {r.worst}", file=sys.stderr)
    return 1 if failed else 0


def cmd_attention_dump(args) -> int:
    model, _ = load_model(args.checkpoint)
    sample = load_stack(args.stack)
    k = model.grid[0] * model.grid[1]
    if not 0 <= args.patch < k:
        raise UsageError(f"patch index {args.patch} outside [0, {k})")
    with T.no_grad():
        model.encode(sample.stack.frames)
    attn = model.last_attention  # n × heads × k × k
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["frame", "head", *[f"p{j}" for j in range(k)]])
        for f in range(attn.shape[0]):
            for h in range(attn.shape[1]):
                writer.writerow([f, h, *[repr(float(v)) for v in attn[f, h, args.patch]]])
    finally:
        if args.out:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthfocus", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", type=Path, help="JSON or TOML run config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--no-lstm", action="store_true", help="average per-frame predictions instead of fusing")
        p.add_argument("--constant-kernel", action="store_true", help="use 3x3 kernels in every stem branch")
        p.add_argument("--no-depth-conv", action="store_true", help="replace the stem merge convs by a channel mean")
        return p

    p = with_config(sub.add_parser("gen-data", help="render a synthetic focal-stack dataset"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = with_config(sub.add_parser("train", help="train on a dataset and write a checkpoint"))
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--limit", type=int, help="use only the first N stacks")
    p.add_argument("--resume", type=Path, help="continue from a checkpoint (its config wins)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics using the first k frames of each stack")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--frames", help="comma-separated frame counts, e.g. 2,4,6,8,10 (default: all frames)")
    p.add_argument("--space", choices=("disparity", "depth"))
    p.add_argument("--limit", type=int)
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict disparity and depth for one stack directory")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--stack", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("verify", help="run gradient checks and property oracles")
    p.add_argument("--quick", action="store_true", help="skip the end-to-end graph check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attention-dump", help="last-block attention rows from one patch, per frame and head")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--stack", type=Path, required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_attention_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (StackValidationError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
