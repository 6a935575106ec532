import numpy as np
import pytest
import torch

from latentseg.detector import AnchorConfig
from latentseg.model import ModelConfig, SegModel
from latentseg.synthdata import SynthParams, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(12, seed=5, params=SynthParams(image_size=128, marker_probability=0.5))


@pytest.fixture
def tiny_model():
    """A <= 1k-parameter float64 network for gradient checks."""
    torch.manual_seed(0)
    cfg = ModelConfig(low_channels=2, high_channels=3, head_channels=2, mask_channels=(2, 2), canvas=4,
                      anchor_config=AnchorConfig(scales=(16,), aspect_ratios=(1,)))
    return SegModel(cfg).double()


@pytest.fixture(scope="session")
def default_model():
    torch.manual_seed(0)
    return SegModel().eval()


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args))


def pytest_terminal_summary(terminalreporter):
    per_test = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) is not None and "criterion" in dict(getattr(rep, "user_properties", ())):
                per_test.setdefault(rep.nodeid, []).append(rep)
    if not per_test:
        return
    results = {}
    for reps in per_test.values():
        props = {}
        for rep in reps:
            props.update(dict(rep.user_properties))
        number, title = props["criterion"]
        entry = results.setdefault(number, {"title": title, "ok": True, "seconds": 0.0})
        entry["ok"] &= not any(r.failed or (r.when == "call" and r.skipped) for r in reps)
        # tests sharing an expensive fixture report their own share of it
        entry["seconds"] += props.get("elapsed", sum(r.duration for r in reps))
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        r = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if r['ok'] else 'FAIL'}  {r['title']}  "
                                    f"({r['seconds']:.1f} s)")
