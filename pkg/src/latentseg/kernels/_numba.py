"""numba-compiled versions of the hot kernels (same signatures as ``_numpy``)."""

import numpy as np
from numba import njit


@njit(cache=True)
def _iou_matrix(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            if iw <= 0.0:
                continue
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1]) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def iou_matrix(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return _iou_matrix(a, b)


@njit(cache=True)
def _nms_keep(boxes, order, threshold):
    n = order.shape[0]
    suppressed = np.zeros(boxes.shape[0], dtype=np.bool_)
    keep = np.empty(n, dtype=np.int64)
    n_keep = 0
    for oi in range(n):
        i = order[oi]
        if suppressed[i]:
            continue
        keep[n_keep] = i
        n_keep += 1
        area_i = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
        for oj in range(oi + 1, n):
            j = order[oj]
            if suppressed[j]:
                continue
            iw = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            ih = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            area_j = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
            if inter / (area_i + area_j - inter) >= threshold:
                suppressed[j] = True
    return keep[:n_keep]


def nms_keep(boxes, order, threshold):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = np.ascontiguousarray(order, dtype=np.int64)
    return _nms_keep(boxes, order, float(threshold))


@njit(cache=True)
def _covered_area(box, regions):
    k = regions.shape[0]
    r = np.empty((k, 4))
    n = 0
    for i in range(k):
        x0 = min(max(regions[i, 0], box[0]), box[2])
        x1 = min(max(regions[i, 2], box[0]), box[2])
        y0 = min(max(regions[i, 1], box[1]), box[3])
        y1 = min(max(regions[i, 3], box[1]), box[3])
        if x1 > x0 and y1 > y0:
            r[n, 0] = x0
            r[n, 1] = y0
            r[n, 2] = x1
            r[n, 3] = y1
            n += 1
    if n == 0:
        return 0.0
    xs = np.empty(2 * n)
    ys = np.empty(2 * n)
    for i in range(n):
        xs[2 * i] = r[i, 0]
        xs[2 * i + 1] = r[i, 2]
        ys[2 * i] = r[i, 1]
        ys[2 * i + 1] = r[i, 3]
    xs = np.unique(xs)
    ys = np.unique(ys)
    total = 0.0
    for yi in range(ys.shape[0] - 1):
        cy = 0.5 * (ys[yi] + ys[yi + 1])
        dy = ys[yi + 1] - ys[yi]
        for xi in range(xs.shape[0] - 1):
            cx = 0.5 * (xs[xi] + xs[xi + 1])
            for i in range(n):
                if r[i, 0] <= cx < r[i, 2] and r[i, 1] <= cy < r[i, 3]:
                    total += dy * (xs[xi + 1] - xs[xi])
                    break
    return total


def covered_area(box, regions):
    box = np.ascontiguousarray(box, dtype=np.float64)
    regions = np.ascontiguousarray(regions, dtype=np.float64).reshape(-1, 4)
    return float(_covered_area(box, regions))


@njit(cache=True)
def _bilinear_resize(src, out_h, out_w):
    h, w = src.shape
    out = np.empty((out_h, out_w))
    sy = h / out_h
    sx = w / out_w
    for i in range(out_h):
        y = min(max((i + 0.5) * sy - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(y))
        y1 = min(y0 + 1, h - 1)
        wy = y - y0
        for j in range(out_w):
            x = min(max((j + 0.5) * sx - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(x))
            x1 = min(x0 + 1, w - 1)
            wx = x - x0
            top = src[y0, x0] * (1 - wx) + src[y0, x1] * wx
            bot = src[y1, x0] * (1 - wx) + src[y1, x1] * wx
            out[i, j] = top * (1 - wy) + bot * wy
    return out


def bilinear_resize(src, out_h, out_w):
    src = np.ascontiguousarray(src, dtype=np.float64)
    return _bilinear_resize(src, int(out_h), int(out_w))


@njit(cache=True)
def _vote_count(stack):
    v, h, w = stack.shape
    out = np.zeros((h, w), dtype=np.int64)
    for k in range(v):
        for i in range(h):
            for j in range(w):
                if stack[k, i, j]:
                    out[i, j] += 1
    return out


def vote_count(stack):
    return _vote_count(np.ascontiguousarray(stack, dtype=np.bool_))


@njit(cache=True)
def _overlap_counts(a, b):
    na = 0
    nb = 0
    nab = 0
    for i in range(a.shape[0]):
        if a[i]:
            na += 1
            if b[i]:
                nab += 1
        if b[i]:
            nb += 1
    return na, nb, nab


def overlap_counts(a, b):
    a = np.ascontiguousarray(a, dtype=np.bool_).ravel()
    b = np.ascontiguousarray(b, dtype=np.bool_).ravel()
    na, nb, nab = _overlap_counts(a, b)
    return int(na), int(nb), int(nab)


@njit(cache=True)
def _equalize_lut(flat):
    hist = np.zeros(256, dtype=np.int64)
    for v in flat:
        hist[v] += 1
    cdf = np.cumsum(hist)
    total = cdf[255]
    cdf_min = 0
    for k in range(256):
        if hist[k] > 0:
            cdf_min = cdf[k]
            break
    lut = np.empty(256, dtype=np.uint8)
    if total == cdf_min:
        for k in range(256):
            lut[k] = k
        return lut
    for k in range(256):
        v = np.floor((cdf[k] - cdf_min) / (total - cdf_min) * 255.0 + 0.5)
        lut[k] = min(max(v, 0.0), 255.0)
    return lut


def equalize_lut(pixels):
    return _equalize_lut(np.ascontiguousarray(pixels, dtype=np.uint8).ravel())
