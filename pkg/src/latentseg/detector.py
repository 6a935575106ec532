"""Anchor-based detection of fingermarks and attention regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import kernels
from .imaging import LatentImage

CLASS_NAMES = ("background", "fingermark", "attention")
LABEL_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}
# exp() guard when decoding log-size deltas
MAX_LOG_SCALE = math.log(1000.0 / 16)
PIXEL_MEAN = 128.0
PIXEL_SCALE = 64.0


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"box must satisfy x1 > x0 and y1 > y0, got {vals}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=np.float64)

    def clipped(self, height: int, width: int) -> "Box":
        return Box(max(0.0, self.x0), max(0.0, self.y0), min(float(width), self.x1), min(float(height), self.y1))

    def scaled(self, s: float) -> "Box":
        return Box(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)

    @classmethod
    def from_array(cls, a) -> "Box":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class Detection:
    box: Box
    label: str
    score: float

    def __post_init__(self):
        if self.label not in ("fingermark", "attention"):
            raise ValueError(f"unknown detection label {self.label!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class AnchorConfig:
    scales: tuple = (8, 16, 32, 64, 128)
    aspect_ratios: tuple = (0.5, 1.0, 2.0)
    stride: int = 8

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        if not self.scales or not self.aspect_ratios:
            raise ValueError("anchor scales and aspect ratios must be non-empty")
        if any(s <= 0 for s in self.scales) or any(r <= 0 for r in self.aspect_ratios):
            raise ValueError("anchor scales and aspect ratios must be positive")
        if self.stride <= 0:
            raise ValueError("anchor stride must be positive")

    @property
    def per_cell(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)


@dataclass
class FeatureMaps:
    """Pyramid levels as (batch, channels, h, w) tensors, finest first."""

    levels: list
    strides: tuple = field(default=(4, 8))

    def __post_init__(self):
        if len(self.levels) != len(self.strides):
            raise ValueError("one stride per level required")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError(f"strides must increase strictly, got {self.strides}")


def generate_anchors(fmap_h: int, fmap_w: int, config: AnchorConfig = AnchorConfig()) -> np.ndarray:
    """All anchors as an (h*w*|scales|*|ratios|, 4) array.

    Ordered by cell row, cell column, scale, ratio; centred on cell centres.
    """
    if fmap_h <= 0 or fmap_w <= 0:
        raise ValueError(f"feature map size must be positive, got {fmap_h}x{fmap_w}")
    sizes = np.array(
        [(s * math.sqrt(r), s / math.sqrt(r)) for s in config.scales for r in config.aspect_ratios]
    )
    cy = (np.arange(fmap_h) + 0.5) * config.stride
    cx = (np.arange(fmap_w) + 0.5) * config.stride
    cy, cx = np.meshgrid(cy, cx, indexing="ij")
    centres = np.stack([cx.ravel(), cy.ravel()], axis=1)[:, None, :]
    half = 0.5 * sizes[None, :, :]
    boxes = np.concatenate([centres - half, centres + half], axis=2)
    return boxes.reshape(-1, 4)


def encode_deltas(anchors, boxes) -> np.ndarray:
    """Centre/log-size offsets of ``boxes`` relative to ``anchors``."""
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    bw, bh = b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]
    dx = ((b[:, 0] + b[:, 2]) - (a[:, 0] + a[:, 2])) * 0.5 / aw
    dy = ((b[:, 1] + b[:, 3]) - (a[:, 1] + a[:, 3])) * 0.5 / ah
    return np.stack([dx, dy, np.log(bw / aw), np.log(bh / ah)], axis=1)


def decode_deltas(anchors, deltas, image_shape=None) -> np.ndarray:
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    cx = 0.5 * (a[:, 0] + a[:, 2]) + d[:, 0] * aw
    cy = 0.5 * (a[:, 1] + a[:, 3]) + d[:, 1] * ah
    w = aw * np.exp(np.minimum(d[:, 2], MAX_LOG_SCALE))
    h = ah * np.exp(np.minimum(d[:, 3], MAX_LOG_SCALE))
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    if image_shape is not None:
        return clip_boxes(out, image_shape)
    return out


def clip_boxes(boxes, image_shape) -> np.ndarray:
    h, w = image_shape
    out = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, w)
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, h)
    return out


def image_tensor(img: LatentImage | np.ndarray, dtype=torch.float32, multiple: int = 8) -> torch.Tensor:
    """Normalized (1, 1, H', W') input, zero-padded (in normalized units)
    on the bottom/right so both sides are divisible by ``multiple``."""
    px = img.pixels if isinstance(img, LatentImage) else np.asarray(img)
    x = (torch.as_tensor(px.astype(np.float64)) - PIXEL_MEAN) / PIXEL_SCALE
    h, w = px.shape
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        x = torch.nn.functional.pad(x, (0, pw, 0, ph))
    return x.to(dtype)[None, None]


def backbone_forward(img: LatentImage, model) -> FeatureMaps:
    dtype = next(model.parameters()).dtype
    x = image_tensor(img, dtype=dtype, multiple=max(model.strides))
    return model.features(x)


def head_outputs(features: FeatureMaps, model):
    """Per-anchor class logits (N, 3) and box deltas (N, 4), batch item 0."""
    logits, deltas = model.detection_head(features.levels[-1])
    return logits[0], deltas[0]


def _propose_arrays(features, anchors, model, image_shape):
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    top = features.levels[-1]
    expected = top.shape[-2] * top.shape[-1] * model.anchor_config.per_cell
    if anchors.shape[0] != expected:
        raise ValueError(
            f"{anchors.shape[0]} anchors do not match a {top.shape[-2]}x{top.shape[-1]} grid "
            f"with {model.anchor_config.per_cell} anchors per cell ({expected})"
        )
    with torch.no_grad():
        logits, deltas = head_outputs(features, model)
        probs = torch.softmax(logits.double(), dim=1).numpy()
    deltas = deltas.double().numpy()
    best = probs.argmax(axis=1)
    fg = np.flatnonzero(best > 0)
    boxes = decode_deltas(anchors[fg], deltas[fg], image_shape)
    return boxes, best[fg], probs[fg, best[fg]]


def _valid(boxes):
    return (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])


def propose_and_classify(features: FeatureMaps, anchors, model, image_shape) -> list[Detection]:
    """Decode every non-background anchor into a scored detection (pre-NMS)."""
    boxes, labels, scores = _propose_arrays(features, anchors, model, image_shape)
    keep = _valid(boxes)
    return [
        Detection(Box.from_array(b), CLASS_NAMES[l], float(min(max(s, 0.0), 1.0)))
        for b, l, s in zip(boxes[keep], labels[keep], scores[keep])
    ]


def _suppression_order(boxes, scores):
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    # primary key last: score desc, then area desc, then coordinates asc
    return np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -areas, -scores))


def nms_arrays(boxes, labels, scores, iou_threshold: float = 0.5) -> np.ndarray:
    """Indices surviving per-class greedy suppression, in output order."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    keep = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        order = _suppression_order(boxes[idx], scores[idx])
        keep.append(idx[kernels.nms_keep(boxes[idx], order, iou_threshold)])
    if not keep:
        return np.zeros(0, dtype=np.int64)
    keep = np.concatenate(keep)
    return keep[_suppression_order(boxes[keep], scores[keep])]


def nms(detections: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    if not detections:
        if not 0.0 < iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
        return []
    boxes = np.array([d.box.as_array() for d in detections])
    labels = np.array([d.label for d in detections])
    scores = np.array([d.score for d in detections])
    return [detections[i] for i in nms_arrays(boxes, labels, scores, iou_threshold)]


def detect(img: LatentImage, model, detection_threshold: float = 0.7, nms_threshold: float = 0.5,
           max_per_class: int = 20, pre_nms_top: int = 2000) -> list[Detection]:
    """Backbone, anchor classification, score filter, then per-class NMS."""
    features = backbone_forward(img, model)
    top = features.levels[-1]
    anchors = generate_anchors(top.shape[-2], top.shape[-1], model.anchor_config)
    boxes, labels, scores = _propose_arrays(features, anchors, model, img.shape)
    keep = (scores >= detection_threshold) & _valid(boxes)
    boxes, labels, scores = boxes[keep], labels[keep], scores[keep]
    if len(scores) > pre_nms_top:
        top_idx = np.argsort(-scores, kind="stable")[:pre_nms_top]
        boxes, labels, scores = boxes[top_idx], labels[top_idx], scores[top_idx]
    out, per_class = [], {}
    for i in nms_arrays(boxes, labels, scores, nms_threshold):
        name = CLASS_NAMES[labels[i]]
        if per_class.get(name, 0) >= max_per_class:
            continue
        per_class[name] = per_class.get(name, 0) + 1
        out.append(Detection(Box.from_array(boxes[i]), name, float(min(scores[i], 1.0))))
    return out
