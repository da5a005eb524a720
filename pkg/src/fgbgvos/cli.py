"""Command-line entry points: gen-data, train, infer, eval.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import matching
from .config import load_run_config
from .errors import DataError, InvalidConfigError, InvalidInputError, NumericError
from .inference import multiscale_flip_inference, segment_sequence
from .metrics import evaluate, write_report
from .model import load_checkpoint
from .training import train

# Kernels with run-to-run nondeterminism would be listed here; the CPU
# pipeline has none (matching kernels scan deterministically, torch CPU
# ops are deterministic for a fixed thread count).
NONDETERMINISTIC_KERNELS: tuple[str, ...] = ()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidConfigError(message)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="override the config seed")


def _run_config(args) -> "RunConfig":
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise InvalidConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    cfg = load_run_config(args.config, overrides)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _enable_determinism(flag: bool) -> None:
    if not flag:
        return
    torch.use_deterministic_algorithms(True)
    listed = ", ".join(NONDETERMINISTIC_KERNELS) or "none"
    print(f"deterministic mode on (kernels with known nondeterminism: {listed})")


def cmd_gen_data(args) -> int:
    cfg = data_mod.SynthConfig(
        num_sequences=args.seqs,
        frames=args.frames,
        size=args.size,
        objects=args.objects,
        jitter=args.jitter,
        distractors=args.distractors,
        seed=args.seed if args.seed is not None else 0,
    )
    records = data_mod.generate_synthetic(cfg, args.out)
    print(f"wrote {len(records)} sequences under {args.out}")
    return 0


def cmd_train(args) -> int:
    _enable_determinism(args.deterministic)
    cfg = _run_config(args)
    if args.steps is not None:
        cfg.steps = args.steps
    train_cfg = cfg.train_config(deterministic=args.deterministic)
    result = train(train_cfg, args.data, args.out, model_config=cfg.model_config())
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {len(result.losses)} steps; final loss {final:.4f}; "
          f"checkpoint at {result.checkpoint_path}")
    return 0


def cmd_infer(args) -> int:
    _enable_determinism(args.deterministic)
    cfg = _run_config(args)
    if args.scales is not None:
        cfg.scales = tuple(float(s) for s in args.scales.split(","))
    if args.flip:
        cfg.flip = True
    infer_cfg = cfg.inference_config()

    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint(ckpt)
    print(f"matching kernels: {matching.active_backend()}")

    out_root = Path(args.out)
    for record in data_mod.load_dataset(args.data):
        first = record.first_label
        frames = record.frames_float()
        if len(infer_cfg.scales) == 1 and infer_cfg.scales[0] == 1.0 and not infer_cfg.flip:
            labels = segment_sequence(model, frames, first)
        else:
            labels = multiscale_flip_inference(model, frames, first, infer_cfg)
        seq_out = out_root / record.seq_id
        seq_out.mkdir(parents=True, exist_ok=True)
        names = record.names
        data_mod.write_label_map(seq_out / f"{names[0]}.png", first)
        for name, lbl in zip(names[1:], labels):
            data_mod.write_label_map(seq_out / f"{name}.png", lbl)
        print(f"{record.seq_id}: wrote {len(labels)} predicted masks")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    if args.tolerance is not None:
        cfg.tolerance = args.tolerance
    pred_root = Path(args.pred)
    if not pred_root.is_dir():
        raise DataError(f"prediction directory not found: {pred_root}")

    predictions: dict[str, np.ndarray] = {}
    ground_truth: dict[str, np.ndarray] = {}
    for record in data_mod.load_dataset(args.data):
        gt = record.complete_labels()
        seq_dir = pred_root / record.seq_id
        if not seq_dir.is_dir():
            raise DataError(f"no predictions for sequence {record.seq_id!r}")
        pred = [record.first_label]
        for name in record.names[1:]:
            p = seq_dir / f"{name}.png"
            if not p.is_file():
                raise DataError(f"missing predicted mask {p}")
            pred.append(data_mod.load_label_map(p))
        predictions[record.seq_id] = np.stack(pred)
        ground_truth[record.seq_id] = gt

    report = evaluate(predictions, ground_truth, cfg.tolerance)
    if args.report:
        write_report(report, args.report)
    print(f"J = {report.j_mean:.3f}  F = {report.f_mean:.3f}  "
          f"J&F = {report.jf_mean:.3f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="fgbgvos",
                     description="video object segmentation from a first-frame mask")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seqs", type=int, default=4)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--distractors", type=int, default=0, metavar="N",
                   help="number of unlabeled look-alike objects")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--deterministic", action="store_true",
                   help="strict determinism; lists nondeterministic kernels")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="propagate first-frame masks")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scales", help="comma list, e.g. 1.0,1.15,1.3")
    p.add_argument("--flip", action="store_true")
    p.add_argument("--deterministic", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tolerance", type=int)
    p.add_argument("--report", help="write the JSON report here")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (InvalidConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
