"""Trainable network: residual backbone, anchor head, atrous mask head."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from .detector import AnchorConfig, FeatureMaps, NumericError

N_DET_CLASSES = 3
N_MASK_CLASSES = 2


@dataclass(frozen=True)
class ModelConfig:
    low_channels: int = 16
    high_channels: int = 32
    head_channels: int = 32
    mask_channels: tuple = (16, 8)
    mask_dilations: tuple = (4, 2, 1)
    canvas: int = 64
    anchor_config: AnchorConfig = field(default_factory=AnchorConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["anchor_config"] = AnchorConfig(**d.get("anchor_config", {}))
        d["mask_channels"] = tuple(d.get("mask_channels", cls.mask_channels))
        d["mask_dilations"] = tuple(d.get("mask_dilations", cls.mask_dilations))
        return cls(**d)


def _conv(cin, cout, stride=1, dilation=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation)


class Backbone(nn.Module):
    """Eight 3x3 convolutions; outputs stride-4 and stride-8 levels."""

    strides = (4, 8)

    def __init__(self, low: int, high: int):
        super().__init__()
        self.stem1 = _conv(1, low, stride=2)
        self.stem2 = _conv(low, low, stride=2)
        self.res1a = _conv(low, low)
        self.res1b = _conv(low, low)
        self.down = _conv(low, high, stride=2)
        self.res2a = _conv(high, high, dilation=2)
        self.res2b = _conv(high, high, dilation=4)
        self.top = _conv(high, high)

    @staticmethod
    def _check(x, name):
        if not torch.isfinite(x).all():
            raise NumericError(f"non-finite activations after backbone layer {name!r}")
        return x

    def forward(self, x):
        x = self._check(F.relu(self.stem1(x)), "stem1")
        x = self._check(F.relu(self.stem2(x)), "stem2")
        r = F.relu(self.res1a(x))
        low = self._check(F.relu(x + self.res1b(r)), "res1")
        x = self._check(F.relu(self.down(low)), "down")
        r = F.relu(self.res2a(x))
        x = self._check(F.relu(x + self.res2b(r)), "res2")
        high = self._check(F.relu(self.top(x)), "top")
        return low, high


class DetectionHead(nn.Module):
    def __init__(self, channels: int, hidden: int, per_cell: int):
        super().__init__()
        self.per_cell = per_cell
        self.conv = _conv(channels, hidden)
        self.cls = nn.Conv2d(hidden, per_cell * N_DET_CLASSES, 1)
        self.reg = nn.Conv2d(hidden, per_cell * 4, 1)

    def forward(self, x):
        h = F.relu(self.conv(x))
        b, _, fh, fw = h.shape
        logits = self.cls(h).view(b, self.per_cell, N_DET_CLASSES, fh, fw)
        deltas = self.reg(h).view(b, self.per_cell, 4, fh, fw)
        # (batch, row, col, anchor, k) flattened -> generate_anchors order
        logits = logits.permute(0, 3, 4, 1, 2).reshape(b, -1, N_DET_CLASSES)
        deltas = deltas.permute(0, 3, 4, 1, 2).reshape(b, -1, 4)
        return logits, deltas


class AtrousMaskHead(nn.Module):
    """Three transposed convolutions: two atrous (stride 1) layers on the RoI
    canvas, then a dilation-1 stride-4 layer for the 4x upsampling.

    A stride-2 transposed conv with an even dilation only reaches one output
    parity per axis, so dilation and striding are kept on separate layers.
    """

    def __init__(self, cin: int, channels=(16, 8), dilations=(4, 2, 1), n_out: int = N_MASK_CLASSES):
        super().__init__()
        c1, c2 = channels
        d1, d2, d3 = dilations
        if d3 % 2 == 0:
            raise ValueError("the upsampling layer needs an odd dilation to reach every output pixel")
        self.atrous1 = nn.ConvTranspose2d(cin, c1, 3, stride=1, padding=d1, dilation=d1)
        self.atrous2 = nn.ConvTranspose2d(c1, c2, 3, stride=1, padding=d2, dilation=d2)
        # output size (n-1)*4 - 2p + d*(8-1) + 1 + op == 4n
        k, stride = 8, 4
        need = d3 * (k - 1) + 1 - stride
        self.up = nn.ConvTranspose2d(c2, n_out, k, stride=stride, padding=(need + 1) // 2,
                                     output_padding=need % 2, dilation=d3)

    def forward(self, x):
        x = F.relu(self.atrous1(x))
        x = F.relu(self.atrous2(x))
        return self.up(x)


class SegModel(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.anchor_config = config.anchor_config
        if config.anchor_config.stride != Backbone.strides[-1]:
            raise ValueError(
                f"anchor stride {config.anchor_config.stride} must equal the top backbone stride {Backbone.strides[-1]}"
            )
        self.backbone = Backbone(config.low_channels, config.high_channels)
        self.detection_head = DetectionHead(config.high_channels, config.head_channels, config.anchor_config.per_cell)
        self.lateral = nn.Conv2d(config.low_channels, config.high_channels, 1, bias=False)
        self.mask_head = AtrousMaskHead(config.high_channels, config.mask_channels, config.mask_dilations)
        self.reset_parameters()

    @property
    def strides(self):
        return Backbone.strides

    @property
    def canvas(self) -> int:
        return self.config.canvas

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        for layer in (self.detection_head.cls, self.detection_head.reg):
            nn.init.normal_(layer.weight, std=0.01)
            nn.init.zeros_(layer.bias)
        nn.init.normal_(self.mask_head.up.weight, std=0.01)

    def features(self, x) -> FeatureMaps:
        low, high = self.backbone(x)
        return FeatureMaps([low, high], self.strides)

    def architecture_hash(self) -> str:
        spec = {
            "config": self.config.to_dict(),
            "params": [(k, list(v.shape)) for k, v in self.state_dict().items()],
        }
        return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]
