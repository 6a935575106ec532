"""Voting fusion of per-variant masks (Algorithm: variants -> detect ->
attention filter -> RoI masks -> paste -> threshold -> K-of-N vote)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import kernels
from .attention import ATTENTION_THRESHOLD, filter_by_attention
from .detector import LABEL_INDEX, backbone_forward, detect
from .imaging import LatentImage, generate_variants
from .seghead import RoIMask, mask_logits, paste_mask


@dataclass(frozen=True)
class SegmentConfig:
    use_attention: bool = True
    use_voting: bool = True
    detection_threshold: float = 0.7
    nms_threshold: float = 0.5
    mask_threshold: float = 0.5
    votes_required: int = 3
    attention_threshold: float = ATTENTION_THRESHOLD

    def with_flags(self, attention: bool, voting: bool) -> "SegmentConfig":
        return replace(self, use_attention=attention, use_voting=voting)


@dataclass
class SegmentationResult:
    mask: np.ndarray
    heatmap: np.ndarray
    instances: list = field(default_factory=list)
    variant_masks: list = field(default_factory=list)


def _check_maps(maps, what):
    if not maps:
        raise ValueError(f"need at least one {what}")
    shape = np.shape(maps[0])
    for m in maps[1:]:
        if np.shape(m) != shape:
            raise ValueError(f"{what} shapes differ: {shape} vs {np.shape(m)}")


def vote_masks(variant_masks, k: int = 3) -> np.ndarray:
    """Pixels marked in at least ``k`` of the variant masks."""
    _check_maps(variant_masks, "variant mask")
    if not 1 <= k <= len(variant_masks):
        raise ValueError(f"K={k} out of range for {len(variant_masks)} masks")
    counts = kernels.vote_count(np.stack([np.asarray(m, dtype=bool) for m in variant_masks]))
    return counts >= k


def accumulate_heatmap(scoremaps) -> np.ndarray:
    _check_maps(scoremaps, "score map")
    return np.clip(np.mean(np.stack([np.asarray(m, dtype=np.float64) for m in scoremaps]), axis=0), 0.0, 1.0)


def instance_scoremaps(img: LatentImage, model, config: SegmentConfig = SegmentConfig()):
    """[(detection, score map)] for the fingermarks that survive filtering."""
    with torch.no_grad():
        dets = detect(img, model, config.detection_threshold, config.nms_threshold)
        if config.use_attention:
            kept = filter_by_attention(dets, config.attention_threshold)
        else:
            kept = [d for d in dets if d.label == "fingermark"]
        # the mask branch pools at the coarsest stride; smaller boxes have no cell to sample
        cell = float(max(model.strides)) ** 2
        kept = [d for d in kept if d.box.area >= cell]
        if not kept:
            return []
        features = backbone_forward(img, model)
        logits, extents = mask_logits(features, [d.box for d in kept], model)
        probs = torch.sigmoid(logits.double()).numpy()
    channel = LABEL_INDEX["fingermark"] - 1
    out = []
    for d, p, (vh, vw) in zip(kept, probs, extents):
        out.append((d, paste_mask(RoIMask(p, vh, vw, d.box), img.height, img.width, channel)))
    return out


def combine_instances(instances, shape) -> np.ndarray:
    score = np.zeros(shape, dtype=np.float64)
    for _, m in instances:
        np.maximum(score, m, out=score)
    return score


def variant_scoremap(image: LatentImage, model, config: SegmentConfig = SegmentConfig()) -> np.ndarray:
    """Per-pixel maximum over kept instance masks (0 where nothing is detected)."""
    return combine_instances(instance_scoremaps(image, model, config), image.shape)


def segment(img: LatentImage, model, config: SegmentConfig = SegmentConfig()) -> SegmentationResult:
    variants = generate_variants(img) if config.use_voting else generate_variants(img)[:1]
    k = config.votes_required if config.use_voting else 1
    scoremaps, masks, instances = [], [], []
    for v in variants:
        inst = instance_scoremaps(v.image, model, config)
        smap = combine_instances(inst, img.shape)
        if v.kind == "original":
            instances = inst
        scoremaps.append(smap)
        masks.append(smap >= config.mask_threshold)
    return SegmentationResult(
        mask=vote_masks(masks, k),
        heatmap=accumulate_heatmap(scoremaps),
        instances=instances,
        variant_masks=masks,
    )
