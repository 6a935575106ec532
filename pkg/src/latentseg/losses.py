"""Training objectives: class-weighted partial mask loss and the weighted
sum of class, box and mask losses."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from .detector import NumericError

EPS = 1e-7
IGNORE = -1


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 2.0
    lam: float = 0.8

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"loss coefficient {name} must be positive, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    l_class: float
    l_box: float
    l_mask: float
    l_total: float
    class_weights: tuple = field(default=())

    def as_dict(self) -> dict:
        return {"L_C": self.l_class, "L_B": self.l_box, "L_M": self.l_mask, "L_all": self.l_total,
                "w": list(self.class_weights)}


def class_weights(pixel_counts) -> np.ndarray:
    """softmax(1 - n_j / N): rarer classes get larger weight; sums to 1."""
    n = np.asarray(pixel_counts, dtype=np.float64).ravel()
    if n.size == 0:
        raise ValueError("need at least one class")
    if np.any(n < 0):
        raise ValueError(f"pixel counts must be non-negative, got {n.tolist()}")
    total = n.sum()
    if total <= 0:
        raise ValueError("all pixel counts are zero")
    z = 1.0 - n / total
    e = np.exp(z - z.max())
    return e / e.sum()


def _bce(p, target):
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p))


def mask_loss(predicted: torch.Tensor, labels: torch.Tensor, weights, lam: float = 0.8,
              per_class: bool = False):
    """Class-weighted partial mask loss.

    ``predicted``: probabilities (R, C, H, W); channel j is class j+1.
    ``labels``: (R, H, W) integers, 0 background, j+1 for class j, -1 ignored.
    For class j the averaged BCE only sees pixels labelled j or background;
    the lambda term is BCE of the same channel against foreground-vs-background
    over all non-ignored pixels. Summed over RoIs and classes.
    """
    predicted = torch.as_tensor(predicted)
    labels = torch.as_tensor(labels)
    if predicted.dim() == 3:
        predicted = predicted[None]
    if labels.dim() == 2:
        labels = labels[None]
    if predicted.shape[0] != labels.shape[0] or predicted.shape[-2:] != labels.shape[-2:]:
        raise ValueError(f"prediction {tuple(predicted.shape)} and labels {tuple(labels.shape)} are not aligned")
    n_classes = predicted.shape[1]
    w = torch.as_tensor(np.asarray(weights, dtype=np.float64), dtype=predicted.dtype).ravel()
    if w.numel() != n_classes:
        raise ValueError(f"{w.numel()} weights for {n_classes} classes")
    p = predicted.clamp(EPS, 1 - EPS)
    known = labels != IGNORE
    foreground = (labels > 0).to(p.dtype)
    terms = []
    for j in range(n_classes):
        pj = p[:, j]
        own = (labels == j + 1).to(p.dtype)
        partial = ((labels == 0) | (labels == j + 1)).to(p.dtype)
        n_partial = partial.sum(dim=(1, 2)).clamp(min=1)
        n_known = known.to(p.dtype).sum(dim=(1, 2)).clamp(min=1)
        main = (_bce(pj, own) * partial).sum(dim=(1, 2)) / n_partial
        bg = (_bce(pj, foreground) * known).sum(dim=(1, 2)) / n_known
        terms.append((w[j] * main + lam * bg).sum())
    if per_class:
        return terms
    return torch.stack(terms).sum()


def smooth_l1(x: torch.Tensor) -> torch.Tensor:
    a = x.abs()
    return torch.where(a < 1.0, 0.5 * a * a, a - 0.5)


def detection_losses(logits: torch.Tensor, deltas: torch.Tensor, class_targets, delta_targets):
    """(L_C, L_B) over sampled anchors.

    L_C: mean cross-entropy over {background, fingermark, attention}.
    L_B: smooth-L1 summed over the 4 offsets, averaged over positives; 0 if none.
    """
    class_targets = torch.as_tensor(class_targets, dtype=torch.long)
    if class_targets.numel() == 0:
        l_c = logits.sum() * 0.0
    else:
        l_c = F.cross_entropy(logits, class_targets)
    pos = class_targets > 0
    if not bool(pos.any()):
        return l_c, deltas.sum() * 0.0
    d_t = torch.as_tensor(np.asarray(delta_targets), dtype=deltas.dtype)
    l_b = smooth_l1(deltas[pos] - d_t[pos]).sum(dim=1).mean()
    return l_c, l_b


def weighted_sum(l_class, l_box, l_mask, config: LossConfig = LossConfig()):
    return config.alpha * l_class + config.beta * l_box + config.gamma * l_mask


def total_loss(l_class, l_box, l_mask, config: LossConfig = LossConfig(), weights=()) -> LossBreakdown:
    vals = [float(v) for v in (l_class, l_box, l_mask)]
    if not all(math.isfinite(v) for v in vals):
        raise NumericError(f"non-finite loss component in {vals}")
    return LossBreakdown(*vals, weighted_sum(*vals, config), tuple(float(x) for x in weights))


# ---------------------------------------------------------------- anchor targets

def match_anchors(iou, gt_labels, positive: float = 0.5, negative: float = 0.3):
    """Anchor class targets from an (anchors, gts) IoU matrix.

    Returns (targets, matched): targets is -1 (ignored), 0 (background) or the
    matched ground-truth class; each ground truth's best anchor is positive.
    """
    n = iou.shape[0]
    targets = np.full(n, -1, dtype=np.int64)
    matched = np.zeros(n, dtype=np.int64)
    if iou.shape[1] == 0:
        targets[:] = 0
        return targets, matched
    matched = iou.argmax(axis=1)
    best = iou[np.arange(n), matched]
    targets[best < negative] = 0
    pos = best >= positive
    targets[pos] = np.asarray(gt_labels)[matched[pos]]
    for g in range(iou.shape[1]):
        top = iou[:, g].max()
        if top <= 0:
            continue
        for a in np.flatnonzero(iou[:, g] == top):
            targets[a] = gt_labels[g]
            matched[a] = g
    return targets, matched


def sample_anchors(targets, n_samples: int, rng, positive_fraction: float = 0.5, hard_scores=None,
                   hard_fraction: float = 0.5):
    """Pick up to ``n_samples`` anchor indices, at most half positive.

    When ``hard_scores`` (foreground probability per anchor) is given,
    ``hard_fraction`` of the negatives are the highest-scoring ones.
    """
    pos = np.flatnonzero(targets > 0)
    neg = np.flatnonzero(targets == 0)
    n_pos = min(len(pos), int(n_samples * positive_fraction))
    pos = rng.choice(pos, n_pos, replace=False) if n_pos else pos[:0]
    n_neg = min(len(neg), n_samples - n_pos)
    if hard_scores is not None and n_neg and hard_fraction > 0:
        n_hard = int(n_neg * hard_fraction)
        hard = neg[np.argsort(-hard_scores[neg], kind="stable")[:n_hard]]
        rest = np.setdiff1d(neg, hard)
        easy = rng.choice(rest, min(len(rest), n_neg - n_hard), replace=False)
        neg = np.concatenate([hard, easy])
    else:
        neg = rng.choice(neg, n_neg, replace=False) if n_neg else neg[:0]
    return np.concatenate([pos, neg]).astype(np.int64)
