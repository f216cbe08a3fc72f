"""``pfca`` command-line entry point.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import cost
from .attention import AttentionKind
from .config import ConfigError, load_config, parse_config
from .data import ImageFormatError, bicubic_upscale, paired_folder
from .gradsuite import SUITES, run_suite
from .models import MODEL_NAMES, build_model, spec_from_name
from .tasks import evaluate_sr, make_task, model_predictor
from .tensor import NonFiniteError
from .training import CheckpointError, load_checkpoint, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

RESNET_NOTE = (
    "note: counts cover the whole network. Published ResNet cost tables often use a narrower\n"
    "convention that leaves out the stem convolution and the classifier; rerun with\n"
    "--exclude stem,head to reproduce it (ResNet-18 then reports about 11.2 M)."
)


class UsageError(Exception):
    pass


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(t) for t in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--input must look like 1x3x256x256, got {text!r}") from None
    if len(shape) != 4 or min(shape) < 1:
        raise UsageError(f"--input must have four positive dimensions, got {text!r}")
    return shape


def cmd_count(args) -> int:
    if args.model not in MODEL_NAMES:
        raise UsageError(f"unknown model {args.model!r}; choose from {', '.join(MODEL_NAMES)}")
    try:
        kinds = [AttentionKind(a.strip(), args.reduction) for a in args.attn.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    shape = _parse_shape(args.input)
    exclude = tuple(g for g in args.exclude.split(",") if g) if args.exclude else ()
    specs = [spec_from_name(args.model, k) for k in kinds]
    try:
        if len(specs) > 1 or args.csv:
            print(cost.compare(specs, shape, csv=args.csv, exclude=exclude), end="")
        else:
            print(cost.analyze(specs[0], shape, exclude).render(per_layer=args.per_layer), end="")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.model.startswith("resnet") and not exclude and not args.csv:
        print(RESNET_NOTE)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.resolved())
    log_path = out / "log.csv"
    if log_path.exists():
        log_path.unlink()
    task = make_task(cfg)
    model = build_model(cfg.model, seed=cfg.train.seed)
    print(f"training {cfg.model.name} on {task.describe}; metric {task.metric_name}")
    state, rows = train_loop(model, task.batch_fn, cfg.train, task.eval_fn, log_path=log_path, checkpoint_dir=out)
    last = next((r for r in reversed(rows) if r[3] is not None), None)
    final = f"{last[3]:.4f}" if last else "n/a"
    print(f"done: {state.step} steps, final loss {rows[-1][2]:.5f}, final {task.metric_name} {final}, "
          f"best {state.best_metric:.4f} at step {state.best_step}")
    return EXIT_OK


def _fmt_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.3f}"


def cmd_eval_sr(args) -> int:
    pairs = paired_folder(args.hr, args.lr)
    if args.predictor == "identity":
        predict = lambda p: p.hr  # noqa: E731
    elif args.predictor == "bicubic":
        predict = lambda p: bicubic_upscale(p.lr)  # noqa: E731
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required with --predictor model")
        cfg_path = Path(args.config) if args.config else Path(args.checkpoint).with_name("config.resolved")
        if not cfg_path.exists():
            raise UsageError(f"no run config found at {cfg_path}; pass --config")
        cfg = parse_config(cfg_path.read_text())
        if cfg.model.family != "msrresnet":
            raise UsageError("eval-sr needs a super-resolution checkpoint")
        model = build_model(cfg.model)
        load_checkpoint(args.checkpoint, model)
        model.eval()
        predict = model_predictor(model)

    rows, means = evaluate_sr(lambda p: np.clip(predict(p), 0.0, 1.0), pairs, args.border)
    width = max(8, *(len(r[0]) for r in rows))
    print(f"{'image':<{width}s} {'psnr':>8s} {'ssim':>7s} {'bic psnr':>9s} {'bic ssim':>9s}")
    for name, p, s, bp, bs in rows:
        print(f"{name:<{width}s} {_fmt_psnr(p):>8s} {s:>7.4f} {_fmt_psnr(bp):>9s} {bs:>9.4f}")
    p, s, bp, bs = means
    print(f"{'mean':<{width}s} {_fmt_psnr(p):>8s} {s:>7.4f} {_fmt_psnr(bp):>9s} {bs:>9.4f}")
    print(f"(Y channel, border {args.border}, predictor {args.predictor})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = run_suite(args.module)
    for r in reports:
        print(r)
    failed = [r.name for r in reports if not r.passed]
    worst = max(r.max_rel_error for r in reports)
    if failed:
        print(f"FAILED: {', '.join(failed)} (worst relative error {worst:.3e})")
        return EXIT_NUMERICAL
    print(f"all {len(reports)} checks passed (worst relative error {worst:.3e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfca", description="Parameter-free channel attention toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("count", help="parameter and MAC report")
    c.add_argument("--model", required=True, help=" | ".join(MODEL_NAMES))
    c.add_argument("--attn", default="none", help="none | pfca | ca | pa; a comma list prints a comparison")
    c.add_argument("--input", default="1x3x224x224", help="N x C x H x W, e.g. 1x3x256x256")
    c.add_argument("--exclude", default="", help="comma list of layer groups to leave out (stem, head)")
    c.add_argument("--reduction", type=int, default=16, help="CA reduction ratio")
    c.add_argument("--csv", action="store_true", help="emit CSV instead of a table")
    c.add_argument("--per-layer", action="store_true", help="list every layer")
    c.set_defaults(func=cmd_count)

    t = sub.add_parser("train", help="train from a run config")
    t.add_argument("--config", required=True, help="config file, or the name of a bundled one")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int, default=None, help="override [train] seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-sr", help="Y-channel PSNR/SSIM on an image folder")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--hr", required=True, help="folder of HR PNGs")
    e.add_argument("--lr", default=None, help="folder of LR PNGs with matching names (default: bicubic / 4)")
    e.add_argument("--border", type=int, default=4)
    e.add_argument("--config", default=None, help="run config (default: config.resolved next to the checkpoint)")
    e.add_argument("--predictor", choices=("model", "bicubic", "identity"), default="model")
    e.set_defaults(func=cmd_eval_sr)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", default="all", choices=("all", *SUITES))
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ImageFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
