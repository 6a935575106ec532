"""Latent fingerprint segmentation: detect fingermarks and examiner
attention regions, predict per-box masks on aspect-preserving RoI canvases,
and fuse the masks of several grayscale variants by pixel voting."""

from .attention import filter_by_attention, overlap_ratio
from .detector import AnchorConfig, Box, Detection, detect, generate_anchors, nms
from .fusion import SegmentConfig, SegmentationResult, segment, vote_masks
from .imaging import LatentImage, generate_variants, load_grayscale
from .metrics import fdr, iou, mdr
from .model import ModelConfig, SegModel
from .synthdata import GroundTruthSample, SynthParams, augment, synth_latent
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig", "Box", "Detection", "GroundTruthSample", "LatentImage", "ModelConfig",
    "SegModel", "SegmentConfig", "SegmentationResult", "SynthParams", "TrainConfig",
    "augment", "detect", "fdr", "filter_by_attention", "generate_anchors", "generate_variants",
    "iou", "load_checkpoint", "load_grayscale", "mdr", "nms", "overlap_ratio",
    "save_checkpoint", "segment", "synth_latent", "train", "vote_masks",
]
