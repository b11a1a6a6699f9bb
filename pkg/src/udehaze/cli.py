"""Command-line entry point.

Machine-readable results go to stdout as JSON; images only go to files.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (SynthParams, atomic_write_bytes, images_to_nchw, iter_image_paths, load_dataset_root,
                   load_image, procedural_clean_image, resize_bilinear, save_image, synthesize_scene)
from .losses import TERMS
from .nets import load_checkpoint
from .priors import fuse_classical
from .trainer import TrainConfig, ablate, evaluate, train

logger = logging.getLogger("udehaze")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("UDEHAZE_THREADS", "1")))
    except ValueError:
        return 1


def _triple(text: str):
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return values


def _count(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# synthesize

def cmd_synthesize(args) -> dict:
    out = Path(args.out_dir)
    (out / "input").mkdir(parents=True, exist_ok=True)
    (out / "reference").mkdir(parents=True, exist_ok=True)
    if args.clean_dir:
        clean_paths = iter_image_paths(args.clean_dir)
        if args.count > 0 and not clean_paths:
            raise RuntimeError(f"no .ppm/.png images found in {args.clean_dir}")
    else:
        clean_paths = None
    params = SynthParams(beta=args.beta, atmos=args.atmos)
    seeds = np.random.SeedSequence(args.seed).generate_state(max(args.count, 1))

    def make(i):
        if clean_paths is None:
            clean = procedural_clean_image(int(seeds[i]), args.size, args.size)
        else:
            clean = load_image(clean_paths[i % len(clean_paths)])
            if args.size:
                clean = resize_bilinear(clean, args.size, args.size)
        scene = synthesize_scene(clean, int(seeds[i]), params)
        name = f"{i:05d}.ppm"
        save_image(scene.degraded, out / "input" / name)
        save_image(scene.clean, out / "reference" / name)
        return {"id": f"{i:05d}", "beta": list(params.beta), "atmos": list(params.atmos),
                "depth_min": float(scene.depth.min()), "depth_max": float(scene.depth.max()),
                "depth_mean": float(scene.depth.mean())}

    with ThreadPoolExecutor(_threads()) as pool:
        truth = list(pool.map(make, range(args.count)))
    atomic_write_bytes(out / "truth.json", (json.dumps(truth, indent=2) + "\n").encode())
    return {"count": args.count, "out_dir": str(out)}


# train / ablate / evaluate

def _train_config(args) -> TrainConfig:
    base = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    for name in ("epochs", "batch_size", "lr", "weight_decay", "resize", "val_fraction",
                 "base_channels", "max_steps", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.data:
        overrides["data_root"] = args.data
    if args.out:
        overrides["out_dir"] = args.out
    lambdas = list(base.lambdas)
    for i, term in enumerate(TERMS):
        value = getattr(args, f"lambda_{term}")
        if value is not None:
            lambdas[i] = value
    overrides["lambdas"] = tuple(lambdas)
    return replace(base, **overrides)


def _train_summary(result, config) -> dict:
    return {
        "best_epoch": result.best.epoch,
        "best_val_psnr": _num(result.best.val_psnr),
        "best_val_ssim": result.best.val_ssim,
        "last_epoch": result.last.epoch,
        "final_beta": result.last.model.beta.data.tolist(),
        "lambdas": list(config.loss_config().lambdas),
        "out_dir": config.out_dir,
    }


def cmd_train(args) -> dict:
    config = _train_config(args)
    if config.data_root is None:
        raise UsageError("train needs --data (or data_root in --config)")
    return _train_summary(train(config), config)


def cmd_ablate(args) -> dict:
    config = _train_config(args)
    if config.data_root is None:
        raise UsageError("ablate needs --data (or data_root in --config)")
    result = ablate(config, args.drop_term)
    config = replace(config, drop_term=args.drop_term)
    return {"drop_term": args.drop_term, **_train_summary(result, config)}


def cmd_evaluate(args) -> dict:
    model = None
    resize = args.resize
    if args.checkpoint:
        model, meta = load_checkpoint(args.checkpoint)
        if resize is None:
            resize = meta.get("train_config", {}).get("resize")
    samples = load_dataset_root(args.data, (resize, resize) if resize else None)
    if not samples:
        raise RuntimeError(f"no image pairs found under {args.data}")
    return evaluate(model, samples).to_dict()


def _num(v):
    return "inf" if v == math.inf else v


# enhance

def _display_depth(depth, d_min, d_max):
    return (depth - d_min) / (d_max - d_min)


def _write_raw(path, array) -> None:
    """Little-endian float64, planar (C, H, W) order."""
    atomic_write_bytes(path, np.ascontiguousarray(array, dtype="<f8").tobytes())


def cmd_enhance(args) -> dict:
    model, _ = load_checkpoint(args.checkpoint)
    paths = iter_image_paths(args.input)
    out = Path(args.out)
    single = len(paths) == 1 and not Path(args.input).is_dir()
    if not single:
        out.mkdir(parents=True, exist_ok=True)
    elif out.parent:
        out.parent.mkdir(parents=True, exist_ok=True)

    def run(path):
        img = load_image(path)
        if args.resize:
            img = resize_bilinear(img, args.resize, args.resize)
        h, w, _ = img.shape
        if h % 8 or w % 8:
            raise RuntimeError(f"{path}: size {h}x{w} is not divisible by 8; pass --resize")
        res = model(images_to_nchw([img]))
        target = out if single else out / (path.stem + ".ppm")
        save_image(res.J.data[0].transpose(1, 2, 0), target)
        record = {"input": str(path), "output": str(target)}
        if args.dump_intermediates:
            stem = target.with_suffix("")
            depth = res.D.data[0, 0]
            t = res.t.data[0]
            save_image(_display_depth(depth, model.cfg.d_min, model.cfg.d_max), f"{stem}_depth.ppm")
            save_image(t.transpose(1, 2, 0), f"{stem}_transmission.ppm")
            save_image(res.J_raw.data[0].transpose(1, 2, 0), f"{stem}_jraw.ppm")
            _write_raw(f"{stem}_depth.f64", depth)
            _write_raw(f"{stem}_transmission.f64", t)
            prior = fuse_classical(img, model.cfg.prior)
            prior.A = res.A.data[0]
            info = {**prior.to_dict(), "beta": model.beta.data.tolist(), "height": h, "width": w,
                    "depth_display_range": [model.cfg.d_min, model.cfg.d_max]}
            atomic_write_bytes(Path(f"{stem}_params.json"),
                               (json.dumps(info, indent=2, sort_keys=True) + "\n").encode())
            record["intermediates"] = str(stem) + "_*"
        return record

    with ThreadPoolExecutor(_threads()) as pool:
        records = list(pool.map(run, paths))
    return {"count": len(records), "outputs": records}


# inspect

def cmd_inspect(args) -> dict:
    img = load_image(args.input)
    prior = fuse_classical(img)
    if args.checkpoint and args.dump_dir:
        model, _ = load_checkpoint(args.checkpoint)
        h, w, _ = img.shape
        if h % 8 or w % 8:
            raise RuntimeError(f"{args.input}: size {h}x{w} is not divisible by 8")
        res = model(images_to_nchw([img]))
        dump = Path(args.dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        save_image(_display_depth(res.D.data[0, 0], model.cfg.d_min, model.cfg.d_max), dump / "depth.ppm")
        save_image(res.t.data[0].transpose(1, 2, 0), dump / "transmission.ppm")
    return {k: [float(x) for x in getattr(prior, k)] for k in ("A_perc", "A_dcp", "A_blur", "A_cl")}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="udehaze", description="Physics-guided underwater image dehazing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON training config (flags override its fields)")
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--quiet", action="store_true", help="only errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthesize", help="degrade clean images with random depth and known beta/A")
    p.add_argument("--clean-dir", help="clean images; procedural scenes if omitted")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=_count, required=True)
    p.add_argument("--beta", type=_triple, default=SynthParams().beta)
    p.add_argument("--atmos", type=_triple, default=SynthParams().atmos)
    p.add_argument("--size", type=int, default=64, help="square output size (default 64)")
    p.set_defaults(func=cmd_synthesize)

    for name, helptext in (("train", "train from scratch"), ("ablate", "train with one loss term removed")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", help="dataset root with input/ and reference/")
        p.add_argument("--out", help="output directory for checkpoints and log")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--resize", type=int)
        p.add_argument("--val-fraction", type=float)
        p.add_argument("--base-channels", type=int)
        p.add_argument("--max-steps", type=int)
        for term in TERMS:
            p.add_argument(f"--lambda-{term.replace('_', '-')}", dest=f"lambda_{term}", type=float)
        if name == "ablate":
            p.add_argument("--drop-term", required=True, choices=TERMS)
        p.set_defaults(func=cmd_train if name == "train" else cmd_ablate)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of a checkpoint (or of the raw inputs) on a dataset")
    p.add_argument("--data", required=True, help="dataset root with input/ and reference/")
    p.add_argument("--checkpoint", help="omit to score the inputs directly against the references")
    p.add_argument("--resize", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("enhance", help="enhance one image or a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-intermediates", action="store_true")
    p.add_argument("--resize", type=int, help="resize to a square size first")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("inspect", help="print the classical atmospheric light components as JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", help="with --dump-dir, also write depth and transmission maps")
    p.add_argument("--dump-dir")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "synthesize" and args.seed is None:
        args.seed = 0
    try:
        payload = args.func(args)
    except UsageError as exc:
        print(f"udehaze: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # surfaced as a runtime error with exit code 2
        logger.debug("command failed", exc_info=True)
        print(f"udehaze: error: {exc}", file=sys.stderr)
        return 2
    _emit(payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
