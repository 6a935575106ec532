"""Pure-numpy versions of the hot kernels.

Every function here has a twin with the same signature in ``_numba``; the
two are checked against each other in the test suite.
"""

import numpy as np


def iou_matrix(a, b):
    """Pairwise IoU between box arrays of shape (N, 4) and (M, 4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms_keep(boxes, order, threshold):
    """Greedy suppression over ``boxes`` visited in ``order``.

    Returns kept indices (into ``boxes``) in visiting order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = np.asarray(order, dtype=np.int64)
    x0, y0, x1, y1 = boxes.T
    areas = (x1 - x0) * (y1 - y0)
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.clip(np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest]), 0.0, None)
        ih = np.clip(np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest]), 0.0, None)
        inter = iw * ih
        iou = inter / (areas[i] + areas[rest] - inter)
        order = rest[iou < threshold]
    return np.asarray(keep, dtype=np.int64)


def covered_area(box, regions):
    """Area of ``box`` intersected with the union of ``regions`` (exact)."""
    box = np.asarray(box, dtype=np.float64)
    regions = np.asarray(regions, dtype=np.float64).reshape(-1, 4)
    if regions.shape[0] == 0:
        return 0.0
    bx0, by0, bx1, by1 = box
    r = regions.copy()
    r[:, 0] = np.clip(r[:, 0], bx0, bx1)
    r[:, 2] = np.clip(r[:, 2], bx0, bx1)
    r[:, 1] = np.clip(r[:, 1], by0, by1)
    r[:, 3] = np.clip(r[:, 3], by0, by1)
    r = r[(r[:, 2] > r[:, 0]) & (r[:, 3] > r[:, 1])]
    if r.shape[0] == 0:
        return 0.0
    xs = np.unique(np.concatenate([r[:, 0], r[:, 2]]))
    ys = np.unique(np.concatenate([r[:, 1], r[:, 3]]))
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    inside_x = (r[:, 0, None] <= cx[None, :]) & (cx[None, :] < r[:, 2, None])
    inside_y = (r[:, 1, None] <= cy[None, :]) & (cy[None, :] < r[:, 3, None])
    covered = np.any(inside_y[:, :, None] & inside_x[:, None, :], axis=0)
    cell = np.diff(ys)[:, None] * np.diff(xs)[None, :]
    return float(np.sum(cell[covered]))


def bilinear_resize(src, out_h, out_w):
    """Half-pixel-centre bilinear resize of a 2-D float array."""
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def vote_count(stack):
    """Per-pixel count of true entries across a (V, H, W) boolean stack."""
    return np.asarray(stack, dtype=bool).sum(axis=0, dtype=np.int64)


def overlap_counts(a, b):
    """(|A|, |B|, |A & B|) for two boolean masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    return int(a.sum()), int(b.sum()), int(np.logical_and(a, b).sum())


def equalize_lut(pixels):
    """Min-CDF-corrected equalization lookup table for uint8 pixels.

    Returns the identity table for constant input.
    """
    hist = np.bincount(np.asarray(pixels, dtype=np.uint8).ravel(), minlength=256)
    cdf = np.cumsum(hist)
    total = cdf[-1]
    cdf_min = cdf[np.flatnonzero(hist)[0]]
    if total == cdf_min:
        return np.arange(256, dtype=np.uint8)
    lut = np.floor((cdf - cdf_min) / (total - cdf_min) * 255.0 + 0.5)
    return np.clip(lut, 0, 255).astype(np.uint8)
