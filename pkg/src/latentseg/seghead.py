"""Per-RoI mask prediction.

RoI features are sampled bilinearly at the box's own aspect ratio (longer
side stretched to the canvas size) and zero-padded into a square canvas
instead of being warped to a square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import kernels
from .detector import Box, FeatureMaps, NumericError

UPSAMPLE = 4


@dataclass
class RoIFeature:
    grid: torch.Tensor  # (C, S, S)
    valid_h: int
    valid_w: int
    source_box: Box

    @property
    def canvas(self) -> int:
        return self.grid.shape[-1]


@dataclass
class RoIMask:
    probabilities: torch.Tensor | np.ndarray  # (classes, 4S, 4S)
    valid_h: int
    valid_w: int
    source_box: Box

    def valid(self, channel: int = 0) -> np.ndarray:
        p = self.probabilities
        if isinstance(p, torch.Tensor):
            p = p.detach().cpu().numpy()
        p = np.asarray(p, dtype=np.float64)
        if p.ndim == 2:
            p = p[None]
        return p[channel, : self.valid_h, : self.valid_w]


def bilinear_sample(feat: torch.Tensor, ys, xs) -> torch.Tensor:
    """Sample a (C, H, W) tensor at paired index-space points -> (C, N).

    Coordinates are clamped to the grid, so every value is a convex
    combination of at most four grid values.
    """
    _, h, w = feat.shape
    ys = torch.as_tensor(np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1))
    xs = torch.as_tensor(np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1))
    y0 = ys.floor().long()
    x0 = xs.floor().long()
    y1 = (y0 + 1).clamp(max=h - 1)
    x1 = (x0 + 1).clamp(max=w - 1)
    wy = (ys - y0).to(feat.dtype)
    wx = (xs - x0).to(feat.dtype)
    top = feat[:, y0, x0] * (1 - wx) + feat[:, y0, x1] * wx
    bot = feat[:, y1, x0] * (1 - wx) + feat[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _axis_weights(coords, size, dtype):
    c = np.clip(coords, 0.0, size - 1)
    i0 = np.floor(c).astype(np.int64)
    i1 = np.minimum(i0 + 1, size - 1)
    return torch.as_tensor(i0), torch.as_tensor(i1), torch.as_tensor(c - i0, dtype=dtype)


def _grid_sample(feat, ys, xs):
    """Separable bilinear sampling on the outer product of ``ys`` and ``xs``."""
    _, h, w = feat.shape
    y0, y1, wy = _axis_weights(ys, h, feat.dtype)
    x0, x1, wx = _axis_weights(xs, w, feat.dtype)
    rows = feat[:, y0, :] * (1 - wy)[None, :, None] + feat[:, y1, :] * wy[None, :, None]
    return rows[:, :, x0] * (1 - wx) + rows[:, :, x1] * wx


def valid_extent(box: Box, stride: float, canvas: int) -> tuple[int, int]:
    """(valid_h, valid_w) of the sampled block: longer side = canvas."""
    fw, fh = box.width / stride, box.height / stride
    if fw * fh < 1.0:
        raise ValueError(f"box {box} covers {fw * fh:.3f} < 1 feature cell at stride {stride}")
    if fw >= fh:
        return max(1, min(canvas, math.ceil(canvas * fh / fw - 1e-9))), canvas
    return canvas, max(1, min(canvas, math.ceil(canvas * fw / fh - 1e-9)))


def roi_align_level(feat: torch.Tensor, stride: float, box: Box, canvas: int = 64) -> RoIFeature:
    """Aspect-preserving RoI extraction from one (C, H, W) level."""
    if canvas < 4:
        raise ValueError(f"canvas must be >= 4, got {canvas}")
    _, h, w = feat.shape
    if box.x1 <= 0 or box.y1 <= 0 or box.x0 >= w * stride or box.y0 >= h * stride:
        raise ValueError(f"box {box} does not intersect the {w * stride}x{h * stride} image")
    vh, vw = valid_extent(box, stride, canvas)
    fx0, fy0 = box.x0 / stride, box.y0 / stride
    fw, fh = box.width / stride, box.height / stride
    ys = fy0 + (np.arange(vh) + 0.5) * (fh / vh) - 0.5
    xs = fx0 + (np.arange(vw) + 0.5) * (fw / vw) - 0.5
    block = _grid_sample(feat, ys, xs)
    grid = torch.nn.functional.pad(block, (0, canvas - vw, 0, canvas - vh))
    return RoIFeature(grid, vh, vw, box)


def nonwarp_roialign(features: FeatureMaps, box: Box, canvas: int = 64, level: int = -1,
                     batch_index: int = 0) -> RoIFeature:
    feat = features.levels[level][batch_index]
    return roi_align_level(feat, features.strides[level], box, canvas)


def fuse_multiscale(high: RoIFeature, low: RoIFeature, model) -> RoIFeature:
    """high + 1x1-projected low, on the same canvas."""
    if high.grid.shape[-2:] != low.grid.shape[-2:]:
        raise ValueError(f"canvas mismatch: {tuple(high.grid.shape[-2:])} vs {tuple(low.grid.shape[-2:])}")
    lateral = model.lateral if hasattr(model, "lateral") else model
    fused = high.grid + lateral(low.grid[None])[0]
    return RoIFeature(fused, high.valid_h, high.valid_w, high.source_box)


def _check_finite(t, what):
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {what}")
    return t


def atrous_upsample(roifeat: RoIFeature, model) -> RoIMask:
    head = model.mask_head if hasattr(model, "mask_head") else model
    logits = _check_finite(head(roifeat.grid[None])[0], "atrous mask head output")
    return RoIMask(torch.sigmoid(logits), UPSAMPLE * roifeat.valid_h, UPSAMPLE * roifeat.valid_w, roifeat.source_box)


def roi_features(features: FeatureMaps, boxes, model, batch_index: int = 0) -> tuple[torch.Tensor, list]:
    """Fused canvases for many boxes -> ((R, C, S, S), [(valid_h, valid_w)])."""
    grids, extents = [], []
    for b in boxes:
        box = b if isinstance(b, Box) else Box.from_array(b)
        high = nonwarp_roialign(features, box, model.canvas, level=-1, batch_index=batch_index)
        low = nonwarp_roialign(features, box, model.canvas, level=0, batch_index=batch_index)
        grids.append(high.grid)
        grids.append(low.grid)
        extents.append((high.valid_h, high.valid_w))
    if not extents:
        c = features.levels[-1].shape[1]
        empty = features.levels[-1].new_zeros((0, c, model.canvas, model.canvas))
        return empty, []
    high = torch.stack(grids[0::2])
    low = torch.stack(grids[1::2])
    return high + model.lateral(low), extents


def mask_logits(features: FeatureMaps, boxes, model, batch_index: int = 0):
    """Mask-head logits (R, classes, 4S, 4S) plus valid extents at mask resolution."""
    fused, extents = roi_features(features, boxes, model, batch_index)
    if not extents:
        n = model.mask_head.up.out_channels
        s = UPSAMPLE * model.canvas
        return fused.new_zeros((0, n, s, s)), []
    logits = _check_finite(model.mask_head(fused), "atrous mask head output")
    return logits, [(UPSAMPLE * h, UPSAMPLE * w) for h, w in extents]


def box_pixel_extent(box: Box, image_h: int, image_w: int) -> tuple[int, int, int, int]:
    x0 = min(max(int(math.floor(box.x0 + 0.5)), 0), image_w)
    y0 = min(max(int(math.floor(box.y0 + 0.5)), 0), image_h)
    x1 = min(max(int(math.floor(box.x1 + 0.5)), 0), image_w)
    y1 = min(max(int(math.floor(box.y1 + 0.5)), 0), image_h)
    return x0, y0, x1, y1


def paste_mask(roimask: RoIMask, image_h: int, image_w: int, channel: int = 0) -> np.ndarray:
    """Resize RoI probabilities onto the box's pixels of an all-zero H x W map."""
    out = np.zeros((image_h, image_w), dtype=np.float64)
    x0, y0, x1, y1 = box_pixel_extent(roimask.source_box, image_h, image_w)
    if x1 <= x0 or y1 <= y0:
        return out
    out[y0:y1, x0:x1] = kernels.bilinear_resize(roimask.valid(channel), y1 - y0, x1 - x0)
    return np.clip(out, 0.0, 1.0)
