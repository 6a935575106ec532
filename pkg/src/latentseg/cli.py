"""Command-line entry point: gen-data, train, segment, eval, overlay.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import RunConfig, load_run_config
from .detector import NumericError
from .fusion import segment
from .imaging import ImageValidationError, load_grayscale, save_grayscale
from .metrics import ABLATIONS, CONFIG_KEYS, evaluate_ablations, format_table, write_reports
from .model import SegModel
from .overlay import render_overlay
from .synthdata import DatasetError, SynthError, generate_dataset, load_dataset, write_dataset
from .trainer import MIN_TRAIN_SAMPLES, CheckpointError, TrainingDiverged, load_checkpoint, save_checkpoint, train

MODEL_DIR_ENV = "LATENTSEG_MODEL_DIR"
EXIT_INPUT = 2
EXIT_NUMERIC = 3

log = logging.getLogger("latentseg")
_DEFAULTS = RunConfig()


class InputError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _default_checkpoint():
    return str(Path(os.environ.get(MODEL_DIR_ENV, ".")) / "model.ckpt")


# flag dest -> (config section, field)
CONFIG_FLAGS = {
    "image_size": ("synth", "image_size"),
    "ridge_period": ("synth", "ridge_period"),
    "n_fingermarks": ("synth", "n_fingermarks"),
    "clutter_level": ("synth", "clutter_level"),
    "marker_probability": ("synth", "marker_probability"),
    "iters": ("train", "total_iters"),
    "phase1_iters": ("train", "phase1_iters"),
    "lr_phase1": ("train", "lr_phase1"),
    "lr_phase2": ("train", "lr_phase2"),
    "weight_decay": ("train", "weight_decay"),
    "momentum": ("train", "momentum"),
    "optimizer": ("train", "optimizer"),
    "hard_negatives": ("train", "hard_negative_fraction"),
    "roi_samples": ("train", "roi_samples_per_image"),
    "alpha": ("loss", "alpha"),
    "beta": ("loss", "beta"),
    "gamma": ("loss", "gamma"),
    "lam": ("loss", "lam"),
    "detection_threshold": ("segment", "detection_threshold"),
    "nms_threshold": ("segment", "nms_threshold"),
    "mask_threshold": ("segment", "mask_threshold"),
    "votes": ("segment", "votes_required"),
    "attention_threshold": ("segment", "attention_threshold"),
}


def _add_config_file(p):
    p.add_argument("--config-file", help="JSON run configuration; explicit flags override it")


def _add_workers(p):
    p.add_argument("--workers", type=_positive_int, default=1, help="torch intra-op threads")


def _add_segment_flags(p):
    d = _DEFAULTS.segment
    p.add_argument("--detection-threshold", type=float, default=d.detection_threshold, help="minimum detection score")
    p.add_argument("--nms-threshold", type=float, default=d.nms_threshold, help="IoU above which NMS suppresses")
    p.add_argument("--mask-threshold", type=float, default=d.mask_threshold, help="per-pixel mask probability cut")
    p.add_argument("--votes", type=_positive_int, default=d.votes_required, help="votes K needed per pixel")
    p.add_argument("--attention-threshold", type=float, default=d.attention_threshold,
                   help="attention coverage needed to keep a fingermark")


def build_parser(suppress: bool = False) -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="latentseg", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    s = _DEFAULTS.synth
    g = sub.add_parser("gen-data", help="generate a synthetic dataset", formatter_class=fmt)
    g.add_argument("--count", type=_positive_int, required=True, help="number of samples")
    g.add_argument("--seed", type=int, default=0, help="base seed")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--image-size", type=int, default=s.image_size, help="side length in pixels")
    g.add_argument("--ridge-period", type=float, default=s.ridge_period, help="ridge spacing in pixels")
    g.add_argument("--n-fingermarks", type=int, default=s.n_fingermarks, help="fingermarks per image (1-3)")
    g.add_argument("--clutter-level", type=float, default=s.clutter_level, help="background clutter in [0, 1]")
    g.add_argument("--marker-probability", type=float, default=s.marker_probability,
                   help="chance each fingermark gets an examiner marker")
    _add_config_file(g)

    t = _DEFAULTS.train
    lc = _DEFAULTS.loss
    tr = sub.add_parser("train", help="train detector and mask head", formatter_class=fmt)
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--out", default="model.ckpt", help="checkpoint path")
    tr.add_argument("--iters", type=_nonneg_int, default=t.total_iters, help="total iterations")
    tr.add_argument("--phase1-iters", type=_nonneg_int, default=t.phase1_iters,
                    help="iterations at --lr-phase1 (scaled 30%% of --iters when only --iters is given)")
    tr.add_argument("--lr-phase1", type=float, default=t.lr_phase1, help="learning rate before the phase boundary")
    tr.add_argument("--lr-phase2", type=float, default=t.lr_phase2, help="learning rate after it")
    tr.add_argument("--weight-decay", type=float, default=t.weight_decay, help="decoupled weight decay")
    tr.add_argument("--optimizer", choices=("adamw", "sgd"), default=t.optimizer, help="update rule")
    tr.add_argument("--momentum", type=float, default=t.momentum, help="SGD momentum (sgd only)")
    tr.add_argument("--roi-samples", type=_positive_int, default=t.roi_samples_per_image, help="anchors sampled per image")
    tr.add_argument("--hard-negatives", type=float, default=t.hard_negative_fraction,
                    help="share of sampled negatives picked by score")
    tr.add_argument("--alpha", type=float, default=lc.alpha, help="class loss weight")
    tr.add_argument("--beta", type=float, default=lc.beta, help="box loss weight")
    tr.add_argument("--gamma", type=float, default=lc.gamma, help="mask loss weight")
    tr.add_argument("--lambda", dest="lam", type=float, default=lc.lam, help="background term weight")
    tr.add_argument("--seed", type=int, default=t.seed, help="training seed")
    tr.add_argument("--val-fraction", type=float, default=0.1, help="held-out share for best-IoU checkpointing")
    tr.add_argument("--log", help="train log path (default: <out>.log.jsonl)")
    _add_config_file(tr)
    _add_workers(tr)

    sg = sub.add_parser("segment", help="segment one latent image", formatter_class=fmt)
    sg.add_argument("--image", required=True, help="input grayscale image")
    sg.add_argument("--checkpoint", default=_default_checkpoint(), help=f"model checkpoint (${MODEL_DIR_ENV}/model.ckpt)")
    sg.add_argument("--out-dir", default=".", help="where <name>_mask.png and <name>_heat.png go")
    sg.add_argument("--no-attention", action="store_true", help="disable the attention filter")
    sg.add_argument("--no-voting", action="store_true", help="use the original image only")
    _add_segment_flags(sg)
    _add_config_file(sg)
    _add_workers(sg)

    ev = sub.add_parser("eval", help="MDR/FDR/IoU report over a dataset", formatter_class=fmt)
    ev.add_argument("--data", required=True, help="dataset directory")
    ev.add_argument("--checkpoint", default=_default_checkpoint(), help=f"model checkpoint (${MODEL_DIR_ENV}/model.ckpt)")
    ev.add_argument("--config", choices=sorted(CONFIG_KEYS), default=None,
                    help="single configuration (none = w/o AM & VF); all four when omitted")
    ev.add_argument("--out", default="report", help="output prefix for <out>.json and <out>.txt")
    _add_segment_flags(ev)
    _add_config_file(ev)
    _add_workers(ev)

    ov = sub.add_parser("overlay", help="render mask boundary / heat map over an image", formatter_class=fmt)
    ov.add_argument("--image", required=True, help="grayscale image")
    ov.add_argument("--mask", required=True, help="binary mask image")
    ov.add_argument("--heatmap", default=None, help="optional heat map image")
    ov.add_argument("--out", required=True, help="output color image")
    if suppress:
        for sp in (parser, *sub.choices.values()):
            for action in sp._actions:
                if not isinstance(action, argparse._SubParsersAction):
                    action.default = argparse.SUPPRESS
    return parser


def resolve_config(args, explicit: set) -> RunConfig:
    cfg = load_run_config(args.config_file) if getattr(args, "config_file", None) else RunConfig()
    d = cfg.to_dict()
    for dest, (section, key) in CONFIG_FLAGS.items():
        if dest in explicit:
            d[section][key] = getattr(args, dest)
    if "iters" in explicit and "phase1_iters" not in explicit:
        d["train"]["phase1_iters"] = int(round(d["train"]["total_iters"] * 0.3))
    if "seed" in explicit and args.command == "train":
        d["train"]["seed"] = args.seed
    return RunConfig.from_dict(d)


def _load_model(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise InputError(str(exc)) from exc


def cmd_gen_data(args, cfg: RunConfig) -> int:
    samples = generate_dataset(args.count, args.seed, cfg.synth)
    try:
        write_dataset(samples, args.out, cfg.synth, base_seed=args.seed)
    except OSError as exc:
        raise InputError(f"cannot write dataset to {args.out}: {exc}") from exc
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    try:
        samples = load_dataset(args.data)
    except DatasetError as exc:
        raise InputError(str(exc)) from exc
    n_val = int(len(samples) * args.val_fraction) if cfg.train.total_iters else 0
    if len(samples) - n_val < MIN_TRAIN_SAMPLES:
        n_val = 0  # too small to spare a validation split; keep the final weights
    train_s, val_s = (samples[:-n_val], samples[-n_val:]) if n_val else (samples, [])
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    ckdir = out.with_name(out.name + ".d")

    def progress(it, bd):
        if it % 100 == 0:
            log.info("iter %d  L_C=%.4f L_B=%.4f L_M=%.4f L_all=%.4f", it, bd.l_class, bd.l_box, bd.l_mask, bd.l_total)

    try:
        torch.manual_seed(cfg.train.seed)
        model = SegModel(cfg.model)
        model, tlog = train(train_s, cfg.train, model=model, checkpoint_dir=ckdir if val_s else None,
                            log_path=log_path, val_samples=val_s, progress=progress)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    save_checkpoint(model, out, cfg.train, {"run_config": cfg.to_dict()})
    if tlog.records:
        last = tlog.records[-1]
        print(f"final  L_C={last['L_C']:.4f}  L_B={last['L_B']:.4f}  L_M={last['L_M']:.4f}  L_all={last['L_all']:.4f}")
    else:
        print("no iterations run; wrote initialized model")
    print(f"checkpoint: {out}")
    return 0


def cmd_segment(args, cfg: RunConfig) -> int:
    model = _load_model(args.checkpoint)
    try:
        img = load_grayscale(args.image)
    except (OSError, ImageValidationError) as exc:
        raise InputError(f"cannot read image {args.image}: {exc}") from exc
    sc = cfg.segment.with_flags(attention=not args.no_attention, voting=not args.no_voting)
    result = segment(img, model, sc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = Path(args.image).stem
    save_grayscale(result.mask.astype(np.uint8) * 255, out / f"{name}_mask.png")
    save_grayscale(np.floor(result.heatmap * 255 + 0.5).astype(np.uint8), out / f"{name}_heat.png")
    print(f"{out / (name + '_mask.png')}\n{out / (name + '_heat.png')}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model = _load_model(args.checkpoint)
    try:
        samples = load_dataset(args.data)
    except DatasetError as exc:
        raise InputError(str(exc)) from exc
    if not samples:
        raise InputError(f"dataset {args.data} is empty")
    labels = [CONFIG_KEYS[args.config]] if args.config else list(ABLATIONS)
    reports = evaluate_ablations(samples, model, cfg.segment, labels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_reports(reports, out.with_name(out.name + ".json"), out.with_name(out.name + ".txt"))
    print(format_table(reports))
    return 0


def _read_gray_array(path, what):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc


def cmd_overlay(args, cfg: RunConfig) -> int:
    gray = _read_gray_array(args.image, "image")
    mask = _read_gray_array(args.mask, "mask") > 127
    heat = _read_gray_array(args.heatmap, "heatmap") / 255.0 if args.heatmap else None
    try:
        rgb = render_overlay(gray, mask, heat)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    Image.fromarray(rgb, mode="RGB").save(args.out)
    print(args.out)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "segment": cmd_segment,
    "eval": cmd_eval,
    "overlay": cmd_overlay,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    explicit = set(vars(build_parser(suppress=True).parse_args(argv)))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "workers"):
        torch.set_num_threads(args.workers)
    try:
        cfg = resolve_config(args, explicit)
        return COMMANDS[args.command](args, cfg)
    except (InputError, DatasetError, SynthError, ImageValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, TrainingDiverged) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
