import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentseg.detector import (
    AnchorConfig, Box, Detection, FeatureMaps, NumericError, backbone_forward, decode_deltas, detect,
    encode_deltas, generate_anchors, nms, propose_and_classify,
)
from latentseg.imaging import LatentImage
from latentseg.kernels import numpy_backend


def det(box, score, label="fingermark"):
    return Detection(Box(*box), label, score)


def random_image(rng, size=64):
    return LatentImage(rng.integers(0, 256, (size, size)).astype(np.uint8))


# ---------------------------------------------------------------- anchors

def test_anchor_centres():
    a = generate_anchors(2, 2, AnchorConfig(scales=(8,), aspect_ratios=(1,), stride=16))
    centres = np.stack([(a[:, 0] + a[:, 2]) / 2, (a[:, 1] + a[:, 3]) / 2], axis=1)
    np.testing.assert_allclose(centres, [[8, 8], [24, 8], [8, 24], [24, 24]])
    np.testing.assert_allclose(a[:, 2] - a[:, 0], 8)
    np.testing.assert_allclose(a[:, 3] - a[:, 1], 8)


def test_default_anchor_count():
    assert generate_anchors(16, 16).shape == (3840, 4)


def test_default_anchor_range():
    cfg = AnchorConfig()
    assert min(cfg.scales) == 8 and max(cfg.scales) == 128


@settings(max_examples=50, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9),
       scales=st.lists(st.sampled_from([8, 16, 32, 64, 128]), min_size=1, max_size=5),
       ratios=st.lists(st.sampled_from([0.25, 0.5, 1.0, 2.0, 4.0]), min_size=1, max_size=5))
def test_anchor_count_formula(h, w, scales, ratios):
    a = generate_anchors(h, w, AnchorConfig(scales=tuple(scales), aspect_ratios=tuple(ratios)))
    assert len(a) == h * w * len(scales) * len(ratios)


@pytest.mark.parametrize("s", [8, 16, 32, 64, 128])
def test_ratio_one_is_square(s):
    a = generate_anchors(1, 1, AnchorConfig(scales=(s,), aspect_ratios=(1,)))
    assert a[0, 2] - a[0, 0] == pytest.approx(s) and a[0, 3] - a[0, 1] == pytest.approx(s)


@pytest.mark.parametrize("kw", [dict(scales=()), dict(aspect_ratios=())])
def test_empty_anchor_config(kw):
    with pytest.raises(ValueError):
        AnchorConfig(**kw)


# ---------------------------------------------------------------- deltas

def test_zero_deltas_identity():
    a = generate_anchors(3, 3)
    np.testing.assert_allclose(decode_deltas(a, np.zeros_like(a)), a)


def test_decode_log2_width():
    b = decode_deltas([[0, 0, 8, 8]], [[0, 0, math.log(2), 0]])[0]
    np.testing.assert_allclose(b, [-4, 0, 12, 8])


def test_decode_clips():
    b = decode_deltas([[50, 50, 70, 70]], [[0, 0, 2, 2]], image_shape=(64, 64))[0]
    assert b.min() >= 0 and b[2] <= 64 and b[3] <= 64


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(4, 100), st.floats(4, 100))
def test_encode_inverts_decode(d, w, h):
    anchor = np.array([[10.0, 20.0, 10.0 + w, 20.0 + h]])
    back = encode_deltas(anchor, decode_deltas(anchor, [d]))
    np.testing.assert_allclose(back[0], d, atol=1e-6)


# ---------------------------------------------------------------- NMS

def test_nms_identical_boxes():
    out = nms([det((0, 0, 10, 10), 0.8), det((0, 0, 10, 10), 0.9)])
    assert [d.score for d in out] == [0.9]


def test_nms_disjoint_survive():
    ds = [det((0, 0, 10, 10), 0.9), det((20, 20, 30, 30), 0.8), det((40, 0, 50, 5), 0.7)]
    assert len(nms(ds)) == 3


def test_nms_one_third_overlap():
    a, b = det((0, 0, 10, 10), 0.9), det((0, 5, 10, 15), 0.8)
    assert nms([a, b], 0.3) == [a]
    assert len(nms([a, b], 0.5)) == 2


def test_nms_per_class():
    ds = [det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.8, "attention")]
    assert len(nms(ds)) == 2


def test_nms_threshold_range():
    with pytest.raises(ValueError):
        nms([det((0, 0, 1, 1), 0.5)], 1.0)


boxes_st = st.lists(
    st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(1, 20), st.integers(1, 20),
              st.sampled_from([0.5, 0.6, 0.7, 0.8, 0.9]), st.sampled_from(["fingermark", "attention"])),
    min_size=1, max_size=25,
)


@settings(max_examples=100, deadline=None)
@given(boxes_st, st.randoms(use_true_random=False), st.sampled_from([0.3, 0.5, 0.7]))
def test_nms_properties(spec, rnd, thr):
    ds = [det((x, y, x + w, y + h), s, lab) for x, y, w, h, s, lab in spec]
    out = nms(ds, thr)
    assert all(any(o is d for d in ds) for o in out)
    shuffled = list(ds)
    rnd.shuffle(shuffled)
    assert [(o.box, o.label, o.score) for o in nms(shuffled, thr)] == [(o.box, o.label, o.score) for o in out]
    for i, p in enumerate(out):
        for q in out[i + 1:]:
            if p.label == q.label:
                iou = numpy_backend.iou_matrix(p.box.as_array()[None], q.box.as_array()[None])[0, 0]
                assert iou < thr


def test_nms_tie_prefers_larger_box():
    small, big = det((0, 0, 10, 10), 0.9), det((0, 0, 10, 12), 0.9)
    assert nms([small, big]) == [big]
    assert nms([big, small]) == [big]


# ---------------------------------------------------------------- network stages

def test_backbone_level_sizes(default_model):
    f = backbone_forward(LatentImage(np.zeros((256, 256), np.uint8)), default_model)
    assert [tuple(l.shape[-2:]) for l in f.levels] == [(64, 64), (32, 32)]
    assert f.strides == (4, 8)


def test_backbone_pads_odd_sizes(default_model):
    f = backbone_forward(LatentImage(np.zeros((50, 43), np.uint8)), default_model)
    assert tuple(f.levels[-1].shape[-2:]) == (7, 6)


def test_zero_model_zero_features(rng):
    from latentseg.model import SegModel
    m = SegModel()
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    f = backbone_forward(random_image(rng), m)
    assert all(float(l.detach().abs().max()) == 0.0 for l in f.levels)


def test_backbone_deterministic(default_model, rng):
    img = random_image(rng)
    a = backbone_forward(img, default_model)
    b = backbone_forward(img, default_model)
    assert all(torch.equal(x, y) for x, y in zip(a.levels, b.levels))


def test_backbone_nan_names_layer(rng):
    from latentseg.model import SegModel
    m = SegModel()
    with torch.no_grad():
        m.backbone.down.weight[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericError, match="down"):
        backbone_forward(random_image(rng), m)


def test_feature_strides_must_increase():
    with pytest.raises(ValueError):
        FeatureMaps([torch.zeros(1), torch.zeros(1)], (8, 4))


def test_propose_grid_mismatch(default_model, rng):
    f = backbone_forward(random_image(rng), default_model)
    with pytest.raises(ValueError, match="do not match"):
        propose_and_classify(f, generate_anchors(3, 3), default_model, (64, 64))


def test_propose_drops_background(default_model, rng):
    from latentseg.model import SegModel
    m = SegModel()
    with torch.no_grad():
        m.detection_head.cls.bias.copy_(torch.tensor([0.0, 5.0, 0.0] * 15))
    f = backbone_forward(random_image(rng), m)
    dets = propose_and_classify(f, generate_anchors(8, 8), m, (64, 64))
    assert dets and all(d.label == "fingermark" for d in dets)
    assert all(0 <= d.box.x0 and d.box.x1 <= 64 for d in dets)
    with torch.no_grad():
        m.detection_head.cls.bias.copy_(torch.tensor([5.0, 0.0, 0.0] * 15))
    assert propose_and_classify(f, generate_anchors(8, 8), m, (64, 64)) == []


def test_untrained_detect_empty(default_model, rng):
    # near-uniform class probabilities (~1/3) never reach 0.7
    assert detect(random_image(rng, 128), default_model) == []


def test_detect_scores_above_threshold(rng):
    from latentseg.model import SegModel
    m = SegModel().eval()
    with torch.no_grad():
        m.detection_head.cls.bias.copy_(torch.tensor([0.0, 1.5, 1.0] * 15))
    for thr in (0.3, 0.5, 0.6):
        out = detect(random_image(rng), m, detection_threshold=thr)
        assert all(d.score >= thr for d in out)
