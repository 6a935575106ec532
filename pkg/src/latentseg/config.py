"""One serializable bundle of every tunable constant, with the published defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .detector import AnchorConfig
from .fusion import SegmentConfig
from .losses import LossConfig
from .model import ModelConfig
from .synthdata import SynthParams
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    synth: SynthParams = field(default_factory=SynthParams)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        # single source of truth: the top-level loss / anchors sections
        object.__setattr__(self, "train", replace(self.train, loss=self.loss))
        object.__setattr__(self, "model", replace(self.model, anchor_config=self.anchors))

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train.pop("loss")
        model = asdict(self.model)
        model.pop("anchor_config")
        return {
            "synth": asdict(self.synth),
            "anchors": asdict(self.anchors),
            "loss": asdict(self.loss),
            "train": train,
            "segment": asdict(self.segment),
            "model": model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls()
        sections = {}
        known = {"synth", "anchors", "loss", "train", "segment", "model"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        for name in known:
            current = getattr(base, name)
            override = dict(d.get(name) or {})
            valid = {f.name for f in fields(current)}
            bad = set(override) - valid
            if bad:
                raise ValueError(f"unknown key(s) in config section {name!r}: {', '.join(sorted(bad))}")
            if name == "model":
                for k in ("mask_channels", "mask_dilations"):
                    if k in override:
                        override[k] = tuple(override[k])
            sections[name] = replace(current, **override)
        return cls(**sections)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_run_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))
