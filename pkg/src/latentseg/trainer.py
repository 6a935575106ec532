"""SGD training under the weighted class + box + mask objective."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import kernels
from .detector import AnchorConfig, NumericError, encode_deltas, generate_anchors, image_tensor
from .fusion import SegmentConfig, segment
from .imaging import VARIANT_KINDS, variant_by_kind
from .losses import (
    IGNORE, LossConfig, class_weights, detection_losses, mask_loss, match_anchors,
    sample_anchors, total_loss, weighted_sum,
)
from .metrics import iou
from .model import ModelConfig, SegModel
from .seghead import mask_logits
from .synthdata import (
    ATTENTION, FINGERMARK, GroundTruthSample, draw_augmentation, instance_boxes,
    label_map, warp_labels, warp_sample,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, iteration, checkpoint=None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint


class CheckpointError(OSError):
    pass


MIN_TRAIN_SAMPLES = 10

@dataclass(frozen=True)
class TrainConfig:
    lr_phase1: float = 0.001
    lr_phase2: float = 0.0001
    phase1_iters: int = 600
    total_iters: int = 2000
    weight_decay: float = 0.0001
    optimizer: str = "adamw"
    momentum: float = 0.9
    images_per_step: int = 1
    roi_samples_per_image: int = 32
    hard_negative_fraction: float = 0.0
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    augment_probability: float = 0.5
    box_jitter: float = 0.08
    eval_every: int = 250

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if not 0 <= self.phase1_iters <= self.total_iters:
            raise ValueError(f"need 0 <= phase1_iters ({self.phase1_iters}) <= total_iters ({self.total_iters})")
        if not (self.lr_phase1 > 0 and self.lr_phase2 > 0):
            raise ValueError("learning rates must be positive")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("weight_decay must be >= 0 and momentum in [0, 1)")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"optimizer must be 'sgd' or 'adamw', got {self.optimizer!r}")
        if not 0.0 <= self.hard_negative_fraction <= 1.0:
            raise ValueError("hard_negative_fraction must lie in [0, 1]")
        if self.images_per_step < 1 or self.roi_samples_per_image < 1:
            raise ValueError("images_per_step and roi_samples_per_image must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(iteration: int, config: TrainConfig) -> float:
    return config.lr_phase1 if iteration < config.phase1_iters else config.lr_phase2


# ---------------------------------------------------------------- targets

def jitter_box(box, rng, amount, shape):
    h, w = shape
    bw, bh = box[2] - box[0], box[3] - box[1]
    noise = rng.normal(0.0, amount, 4) * np.array([bw, bh, bw, bh])
    out = np.array(box, dtype=np.float64) + noise
    out[0::2] = np.clip(out[0::2], 0.0, w)
    out[1::2] = np.clip(out[1::2], 0.0, h)
    if out[2] - out[0] < 8 or out[3] - out[1] < 8:
        return np.array(box, dtype=np.float64)
    return out


def roi_label_targets(labels: np.ndarray, box, extent, size: int) -> np.ndarray:
    """Nearest-sampled labels on the mask grid of one RoI; padding is IGNORE."""
    vh, vw = extent
    h, w = labels.shape
    x0, y0, x1, y1 = box
    ys = np.clip(np.floor(y0 + (np.arange(vh) + 0.5) * (y1 - y0) / vh).astype(np.int64), 0, h - 1)
    xs = np.clip(np.floor(x0 + (np.arange(vw) + 0.5) * (x1 - x0) / vw).astype(np.int64), 0, w - 1)
    out = np.full((size, size), IGNORE, dtype=np.int64)
    out[:vh, :vw] = labels[np.ix_(ys, xs)]
    return out


@dataclass
class StepBatch:
    image: np.ndarray
    gt_boxes: np.ndarray
    gt_labels: np.ndarray
    labels: np.ndarray


def prepare_step(sample: GroundTruthSample, rng, config: TrainConfig) -> StepBatch:
    labels = label_map(sample)
    if rng.random() < config.augment_probability:
        m = draw_augmentation(sample, int(rng.integers(2**31)))
        sample = warp_sample(sample, m)
        labels = warp_labels(labels, m)
    kind = VARIANT_KINDS[int(rng.integers(len(VARIANT_KINDS)))]
    image = variant_by_kind(sample.image, kind).pixels
    fm = instance_boxes(sample.mask)
    att = sample.attention_regions.astype(np.float64).reshape(-1, 4)
    boxes = np.concatenate([fm, att])
    gt_labels = np.array([FINGERMARK] * len(fm) + [ATTENTION] * len(att), dtype=np.int64)
    return StepBatch(image, boxes, gt_labels, labels)


def step_losses(model: SegModel, batch: StepBatch, rng, config: TrainConfig, anchor_cache: dict):
    """(L_C, L_B, L_M, class weights) for one image."""
    dtype = next(model.parameters()).dtype
    x = image_tensor(batch.image, dtype=dtype, multiple=max(model.strides))
    features = model.features(x)
    logits, deltas = model.detection_head(features.levels[-1])
    logits, deltas = logits[0], deltas[0]

    fh, fw = features.levels[-1].shape[-2:]
    key = (fh, fw, model.anchor_config)
    if key not in anchor_cache:
        anchor_cache[key] = generate_anchors(fh, fw, model.anchor_config)
    anchors = anchor_cache[key]

    iou_m = kernels.iou_matrix(anchors, batch.gt_boxes)
    targets, matched = match_anchors(iou_m, batch.gt_labels)
    with torch.no_grad():
        fg_prob = 1.0 - torch.softmax(logits.double(), dim=1)[:, 0].numpy()
    idx = sample_anchors(targets, config.roi_samples_per_image, rng, hard_scores=fg_prob,
                         hard_fraction=config.hard_negative_fraction)
    delta_t = np.zeros((len(idx), 4))
    pos = targets[idx] > 0
    if pos.any() and len(batch.gt_boxes):
        delta_t[pos] = encode_deltas(anchors[idx[pos]], batch.gt_boxes[matched[idx[pos]]])
    l_c, l_b = detection_losses(logits[idx], deltas[idx], targets[idx], delta_t)

    shape = batch.labels.shape
    rois = [jitter_box(b, rng, config.box_jitter, shape) for b in batch.gt_boxes]
    if not rois:
        return l_c, l_b, logits.sum() * 0.0, np.full(2, 0.5)
    m_logits, extents = mask_logits(features, rois, model)
    size = m_logits.shape[-1]
    tgt = np.stack([roi_label_targets(batch.labels, r, e, size) for r, e in zip(rois, extents)])
    counts = [(tgt == FINGERMARK).sum(), (tgt == ATTENTION).sum()]
    w = class_weights(counts) if sum(counts) > 0 else np.full(2, 0.5)
    l_m = mask_loss(torch.sigmoid(m_logits), torch.as_tensor(tgt), w, config.loss.lam)
    return l_c, l_b, l_m, w


# ---------------------------------------------------------------- checkpoints

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_checkpoint(model: SegModel, path, train_config: TrainConfig | None = None, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arch = model.architecture_hash()
    torch.save({"state_dict": model.state_dict(), "model_config": model.config.to_dict(), "arch_hash": arch}, path)
    meta = {
        "arch_hash": arch,
        "anchor_config": asdict(model.anchor_config),
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
    }
    if extra:
        meta.update(extra)
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def _diff_fields(expected: dict, found: dict, prefix=""):
    for k in sorted(set(expected) | set(found)):
        a, b = expected.get(k), found.get(k)
        if isinstance(a, dict) and isinstance(b, dict):
            yield from _diff_fields(a, b, f"{prefix}{k}.")
        elif json.dumps(a) != json.dumps(b):
            yield f"{prefix}{k}"


def load_checkpoint(path, anchor_config: AnchorConfig | None = None) -> SegModel:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    side = _sidecar(path)
    if not side.is_file():
        raise CheckpointError(f"checkpoint {path} has no metadata file {side.name}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted checkpoint metadata {side}: {exc}") from exc
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
        state, blob_cfg, blob_hash = blob["state_dict"], blob["model_config"], blob["arch_hash"]
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    side_cfg = dict(meta.get("model_config") or {})
    side_cfg["anchor_config"] = meta.get("anchor_config", side_cfg.get("anchor_config"))
    bad = list(_diff_fields(blob_cfg, side_cfg))
    if bad:
        raise CheckpointError(f"checkpoint {path}: metadata disagrees with weights on field(s) {', '.join(bad)}")
    if anchor_config is not None:
        bad = list(_diff_fields(asdict(anchor_config), blob_cfg["anchor_config"], "anchor_config."))
        if bad:
            raise CheckpointError(f"checkpoint {path}: anchor configuration mismatch on {', '.join(bad)}")
    model = SegModel(ModelConfig.from_dict(blob_cfg))
    if model.architecture_hash() != blob_hash or meta.get("arch_hash") != blob_hash:
        raise CheckpointError(f"checkpoint {path}: architecture hash mismatch")
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path}: {exc}") from exc
    model.eval()
    return model


# ---------------------------------------------------------------- training

@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_iou: float | None = None
    best_iteration: int | None = None

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def make_optimizer(model, config: TrainConfig):
    if config.optimizer == "sgd":
        return torch.optim.SGD(model.parameters(), lr=config.lr_phase1, momentum=config.momentum,
                               weight_decay=config.weight_decay)
    # decoupled decay: a zero-gradient step scales weights by exactly 1 - lr*decay
    return torch.optim.AdamW(model.parameters(), lr=config.lr_phase1, weight_decay=config.weight_decay)


def sample_order(n: int, total: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919])
    reps = -(-total // n) if n else 0
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:total] if reps else np.zeros(0, int)


def quick_iou(model, samples) -> float:
    cfg = SegmentConfig(use_attention=False, use_voting=False)
    with torch.no_grad():
        return float(np.mean([iou(segment(s.image, model, cfg).mask, s.mask) for s in samples]))


def train(samples, config: TrainConfig = TrainConfig(), model: SegModel | None = None,
          model_config: ModelConfig = ModelConfig(), checkpoint_dir=None, log_path=None,
          val_samples=None, progress=None) -> tuple[SegModel, TrainLog]:
    samples = list(samples)
    if len(samples) < MIN_TRAIN_SAMPLES and config.total_iters > 0:
        raise ValueError(f"training needs at least {MIN_TRAIN_SAMPLES} samples, got {len(samples)}")
    if model is None:
        torch.manual_seed(config.seed)
        model = SegModel(model_config)
    trainlog = TrainLog()
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if config.total_iters == 0:
        if ckdir is not None:
            save_checkpoint(model, ckdir / "final.ckpt", config)
        if log_path is not None:
            trainlog.write_jsonl(log_path)
        return model, trainlog

    model.train()
    opt = make_optimizer(model, config)
    order = sample_order(len(samples), config.total_iters * config.images_per_step, config.seed)
    anchor_cache = {}
    pos = 0
    for it in range(config.total_iters):
        lr = learning_rate(it, config)
        for g in opt.param_groups:
            g["lr"] = lr
        rng = np.random.default_rng([config.seed, it])
        opt.zero_grad()
        parts = []
        for _ in range(config.images_per_step):
            batch = prepare_step(samples[order[pos]], rng, config)
            pos += 1
            l_c, l_b, l_m, w = step_losses(model, batch, rng, config, anchor_cache)
            parts.append((l_c, l_b, l_m, w))
        n = config.images_per_step
        l_c = sum(p[0] for p in parts) / n
        l_b = sum(p[1] for p in parts) / n
        l_m = sum(p[2] for p in parts) / n
        w = np.mean([p[3] for p in parts], axis=0)
        l_all = weighted_sum(l_c, l_b, l_m, config.loss)
        if not torch.isfinite(l_all):
            ck = None
            if ckdir is not None:
                ck = ckdir / "last_good.ckpt"
                save_checkpoint(model, ck, config, {"iteration": it})
            raise TrainingDiverged(f"non-finite loss at iteration {it}: L_C={l_c.item()}, L_B={l_b.item()}, "
                                   f"L_M={l_m.item()}", it, ck)
        l_all.backward()
        opt.step()
        bd = total_loss(l_c.detach(), l_b.detach(), l_m.detach(), config.loss, w)
        trainlog.records.append({"iteration": it, "lr": lr, **{k: v for k, v in bd.as_dict().items() if k != "w"}})
        if progress is not None:
            progress(it, bd)
        if ckdir is not None and val_samples and ((it + 1) % config.eval_every == 0 or it + 1 == config.total_iters):
            model.eval()
            score = quick_iou(model, val_samples)
            model.train()
            log.info("iteration %d: validation IoU %.4f", it + 1, score)
            if trainlog.best_iou is None or score > trainlog.best_iou:
                trainlog.best_iou, trainlog.best_iteration = score, it + 1
                save_checkpoint(model, ckdir / "best.ckpt", config, {"iteration": it + 1, "val_iou": score})
    model.eval()
    if ckdir is not None:
        save_checkpoint(model, ckdir / "final.ckpt", config, {"iteration": config.total_iters})
    if log_path is not None:
        trainlog.write_jsonl(log_path)
    return model, trainlog
