"""Pixel-set segmentation metrics and dataset reports."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .fusion import SegmentConfig, segment

log = logging.getLogger(__name__)

# Published full-configuration figures on NIST SD27. Reference only: that
# database is restricted and nothing here reproduces or checks these.
PUBLISHED_SD27_FULL = {"mdr": 0.0257, "fdr": 0.1636, "iou": 0.8176}

ABLATIONS = {
    "w/o AM & VF": dict(attention=False, voting=False),
    "with AM": dict(attention=True, voting=False),
    "with VF": dict(attention=False, voting=True),
    "full": dict(attention=True, voting=True),
}
CONFIG_KEYS = {"none": "w/o AM & VF", "am": "with AM", "vf": "with VF", "full": "full"}


def _counts(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return kernels.overlap_counts(pred, gt)


def mdr(pred, gt) -> float:
    """Missed detection rate (|B| - |A&B|) / |B|."""
    a, b, ab = _counts(pred, gt)
    if b == 0:
        raise ValueError("MDR is undefined for an empty ground-truth mask")
    return (b - ab) / b


def fdr(pred, gt) -> float:
    """False detection rate (|A| - |A&B|) / |A|; 0 for an empty prediction."""
    a, b, ab = _counts(pred, gt)
    return 0.0 if a == 0 else (a - ab) / a


def iou(pred, gt) -> float:
    a, b, ab = _counts(pred, gt)
    union = a + b - ab
    if union == 0:
        raise ValueError("IoU is undefined when both masks are empty")
    return ab / union


@dataclass
class MetricsReport:
    config_label: str
    mdr: float = 0.0
    fdr: float = 0.0
    iou: float = 0.0
    timing_ms: float = 0.0
    per_image: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(samples, model, config: SegmentConfig = SegmentConfig(), config_label: str = "full") -> MetricsReport:
    rows, times, skipped = [], [], []
    for s in samples:
        if s.mask is None or not np.any(s.mask):
            log.warning("skipping %s: no ground-truth foreground", s.id)
            skipped.append(s.id)
            continue
        t0 = time.perf_counter()
        result = segment(s.image, model, config)
        times.append((time.perf_counter() - t0) * 1000.0)
        rows.append({"id": s.id, "mdr": mdr(result.mask, s.mask), "fdr": fdr(result.mask, s.mask),
                     "iou": iou(result.mask, s.mask), "time_ms": times[-1]})
    rep = MetricsReport(config_label=config_label, per_image=rows, skipped=skipped)
    if rows:
        rep.mdr = float(np.mean([r["mdr"] for r in rows]))
        rep.fdr = float(np.mean([r["fdr"] for r in rows]))
        rep.iou = float(np.mean([r["iou"] for r in rows]))
        rep.timing_ms = float(np.mean(times))
    return rep


def evaluate_ablations(samples, model, base: SegmentConfig = SegmentConfig(), labels=None) -> list[MetricsReport]:
    labels = list(ABLATIONS) if labels is None else labels
    return [
        evaluate(samples, model, base.with_flags(**ABLATIONS[label]), config_label=label)
        for label in labels
    ]


def format_table(reports) -> str:
    lines = [f"{'Configuration':<14} {'MDR':>8} {'FDR':>8} {'IoU':>8} {'Time(ms)':>10}", "-" * 52]
    for r in reports:
        lines.append(f"{r.config_label:<14} {r.mdr:>8.2%} {r.fdr:>8.2%} {r.iou:>8.2%} {r.timing_ms:>10.1f}")
    return "\n".join(lines)


def write_reports(reports, json_path, table_path=None) -> None:
    with open(json_path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
    if table_path is not None:
        with open(table_path, "w") as fh:
            fh.write(format_table(reports) + "\n")
