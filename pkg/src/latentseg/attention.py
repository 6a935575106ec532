"""Keep fingermark detections that lie inside detected attention regions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .detector import Box, Detection

ATTENTION_THRESHOLD = 0.7


@dataclass(frozen=True)
class AttentionDecision:
    detection: Detection
    ratio: float
    kept: bool


def _as_array(b):
    return b.as_array() if isinstance(b, Box) else np.asarray(b, dtype=np.float64)


def overlap_ratio(box, regions) -> float:
    """Fraction of ``box`` covered by the union of ``regions``."""
    b = _as_array(box)
    area = (b[2] - b[0]) * (b[3] - b[1])
    if not area > 0:
        raise ValueError(f"box {b.tolist()} has zero area")
    regs = np.array([_as_array(r) for r in regions], dtype=np.float64).reshape(-1, 4)
    return min(1.0, kernels.covered_area(b, regs) / area)


def attention_decisions(detections, threshold: float = ATTENTION_THRESHOLD) -> list[AttentionDecision]:
    regions = [d.box for d in detections if d.label == "attention"]
    out = []
    for d in detections:
        if d.label != "fingermark":
            continue
        if not regions:
            out.append(AttentionDecision(d, 0.0, True))
            continue
        r = overlap_ratio(d.box, regions)
        out.append(AttentionDecision(d, r, r >= threshold))
    return out


def filter_by_attention(detections, threshold: float = ATTENTION_THRESHOLD) -> list[Detection]:
    """Fingermarks covered >= ``threshold`` by attention regions.

    With no attention detections every fingermark passes.
    """
    return [dec.detection for dec in attention_decisions(detections, threshold) if dec.kept]
