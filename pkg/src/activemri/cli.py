"""Command-line interface.

Subcommands::

    gen-data        write synthetic phantoms and a manifest
    train           self-play training, writes checkpoints and metrics.csv
    evaluate        per-image PSNR table for every configured method
    reconstruct     reconstruct one image with one method
    export-pattern  dump the learned progressive pattern as a 0/1 CSV
    baseline        fixed-pattern baselines only (no networks)
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, plotting
from .config import DEFAULT_EVAL_METHODS, ConfigError, load_config
from .signal import psnr
from .trainer import (
    evaluate,
    load_checkpoint,
    method_estimate,
    progressive_patterns,
    train,
    write_eval_csv,
)

log = logging.getLogger("activemri")

BASELINE_METHODS = ("lpf_zf", "uniform_zf", "vds_zf", "vds_tv")


def build_parser():
    p = argparse.ArgumentParser(prog="activemri", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", default=".", help="output directory (default: .)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic phantoms")
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--side", type=int, default=16)
    g.add_argument("--test-fraction", type=float, default=0.25)

    t = sub.add_parser("train", help="self-play training")
    t.add_argument("--data", required=True, help="dataset directory or manifest.json")
    t.add_argument("--rounds", type=int, help="override config rounds")
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("evaluate", help="PSNR table on a dataset split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--budget", type=int, help="lines per image (default side / acceleration)")

    r = sub.add_parser("reconstruct", help="reconstruct a single image")
    r.add_argument("--image", required=True, help="AMRI or PGM file")
    r.add_argument("--method", required=True, choices=DEFAULT_EVAL_METHODS)
    r.add_argument("--checkpoint", help="needed for network-based methods")
    r.add_argument("--budget", type=int)

    x = sub.add_parser("export-pattern", help="learned progressive pattern as CSV")
    x.add_argument("--image", required=True)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--budget", type=int)

    b = sub.add_parser("baseline", help="fixed-pattern baselines on a dataset split")
    b.add_argument("--data", required=True)
    b.add_argument("--split", default="test")
    b.add_argument("--budget", type=int)
    b.add_argument("--methods", nargs="+", choices=BASELINE_METHODS, default=list(BASELINE_METHODS))
    return p


def _read_image(path):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return data.load_pgm(path)
    return data.load_image(path)


def _checkpoint(path, cfg):
    state, _ = load_checkpoint(path, cfg)
    return state


def cmd_gen_data(args, cfg, out):
    manifest = data.generate_phantoms(out, args.count, args.side, cfg.seed, args.test_fraction)
    print(f"wrote {args.count} phantoms and {out / 'manifest.json'}")
    return manifest


def cmd_train(args, cfg, out):
    if args.rounds is not None:
        cfg.rounds = args.rounds
    manifest = data.load_manifest(args.data)
    _, images = data.load_split(manifest, "train")
    state = _checkpoint(args.resume, cfg) if args.resume else None
    _, rows = train(images, cfg, out, state=state)
    if cfg.figures and rows:
        plotting.plot_training_curves(rows, out / "training_curves.png")
    print(f"trained {cfg.rounds} rounds; metrics in {out / 'metrics.csv'}")


def _summary(rows):
    by = {}
    for _, method, value in rows:
        by.setdefault(method, []).append(value)
    for method, vals in by.items():
        print(f"{method:12s} {np.mean(vals):8.3f} dB  (n={len(vals)})")


def cmd_evaluate(args, cfg, out):
    state = _checkpoint(args.checkpoint, cfg)
    manifest = data.load_manifest(args.data)
    ids, images = data.load_split(manifest, args.split)
    rows = evaluate(ids, images, state.recon, state.sample, cfg, args.budget)
    write_eval_csv(out / "evaluation.csv", rows)
    if cfg.figures and rows:
        plotting.plot_method_summary(rows, out / "evaluation.png")
    _summary(rows)


def cmd_baseline(args, cfg, out):
    cfg.eval_methods = list(args.methods)
    manifest = data.load_manifest(args.data)
    ids, images = data.load_split(manifest, args.split)
    rows = evaluate(ids, images, None, None, cfg, args.budget)
    write_eval_csv(out / "baseline.csv", rows)
    if cfg.figures and rows:
        plotting.plot_method_summary(rows, out / "baseline.png", "Baseline PSNR")
    _summary(rows)


def cmd_reconstruct(args, cfg, out):
    image = _read_image(args.image)
    if args.method in ("ours", "ours_zf", "lpf_recon") and not args.checkpoint:
        raise ValueError(f"method {args.method} needs --checkpoint")
    state = _checkpoint(args.checkpoint, cfg) if args.checkpoint else None
    recon, sample = (state.recon, state.sample) if state else (None, None)
    est = method_estimate(image, args.method, recon, sample, cfg, args.budget)
    value = psnr(est, image)
    stem = Path(args.image).stem
    dest = out / f"{stem}_{args.method}.amri"
    data.save_image(dest, est)
    if cfg.figures:
        plotting.plot_images({"reference": image, f"{args.method} {value:.2f} dB": est},
                             out / f"{stem}_{args.method}.png")
    print(f"{args.method}: {value:.3f} dB -> {dest}")


def cmd_export_pattern(args, cfg, out):
    image = _read_image(args.image)
    state = _checkpoint(args.checkpoint, cfg)
    side = image.shape[-1]
    T = cfg.budget(side) if args.budget is None else args.budget
    patterns = [p for p in progressive_patterns(image, state.recon, state.sample, T, cfg) if p.any()]
    stem = Path(args.image).stem
    dest = out / f"{stem}_pattern.csv"
    with open(dest, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(p.astype(int).tolist() for p in patterns)
    if cfg.figures:
        plotting.plot_pattern_evolution(patterns, out / f"{stem}_pattern.png")
    print(f"wrote {len(patterns)} pattern rows to {dest}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "reconstruct": cmd_reconstruct,
    "export-pattern": cmd_export_pattern,
    "baseline": cmd_baseline,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except (ConfigError, data.FormatError, FileNotFoundError, ValueError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"activemri: error: {msg}", file=sys.stderr)
        return 1
    return 0
