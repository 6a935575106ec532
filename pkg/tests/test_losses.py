import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentseg.detector import NumericError
from latentseg.losses import (
    EPS, LossConfig, class_weights, detection_losses, mask_loss, match_anchors, sample_anchors, smooth_l1,
    total_loss,
)


def softmax(z):
    e = np.exp(np.asarray(z, float) - np.max(z))
    return e / e.sum()


# ---------------------------------------------------------------- class weights

def test_single_class_weight():
    np.testing.assert_allclose(class_weights([17]), [1.0])


def test_equal_counts():
    np.testing.assert_allclose(class_weights([40, 40]), [0.5, 0.5])


def test_ninety_ten():
    w = class_weights([90, 10])
    np.testing.assert_allclose(w, softmax([0.1, 0.9]), atol=1e-12)
    np.testing.assert_allclose(w, [0.3100, 0.6900], atol=1e-4)


def test_all_zero_counts():
    with pytest.raises(ValueError):
        class_weights([0, 0])


@settings(max_examples=200)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=6).filter(lambda c: sum(c) > 0))
def test_weights_sum_and_order(counts):
    w = class_weights(counts)
    assert abs(w.sum() - 1.0) < 1e-9
    for i in range(len(counts)):
        for j in range(len(counts)):
            if counts[i] < counts[j]:
                assert w[i] > w[j]


# ---------------------------------------------------------------- mask loss

def loss_oracle(p, labels, w, lam):
    """Straight-line numpy restatement of the per-class partial loss."""
    p = np.clip(p, EPS, 1 - EPS)
    total = 0.0
    for r in range(p.shape[0]):
        lab = labels[r]
        for j in range(p.shape[1]):
            q = p[r, j]
            part = (lab == 0) | (lab == j + 1)
            known = lab != -1
            own = (lab == j + 1).astype(float)
            fg = (lab > 0).astype(float)
            bce = lambda t: -(t * np.log(q) + (1 - t) * np.log(1 - q))
            main = (bce(own) * part).sum() / max(part.sum(), 1)
            bg = (bce(fg) * known).sum() / max(known.sum(), 1)
            total += w[j] * main + lam * bg
    return total


def test_single_pixel_half():
    got = mask_loss(torch.tensor([[[[0.5]]]], dtype=torch.float64), torch.tensor([[[1]]]), [1.0], lam=0.0)
    assert float(got) == pytest.approx(math.log(2), abs=1e-12)
    assert float(got) == pytest.approx(0.6931, abs=1e-4)


@pytest.mark.parametrize("lam", [0.0, 0.8])
def test_perfect_prediction(rng, lam):
    # on the pixels channel j is scored against (background or class j, plus
    # every labelled pixel in the lambda term) its target is the foreground
    # indicator, so that is the perfect prediction for each channel
    labels = rng.integers(-1, 3, (1, 9, 9))
    fg = (labels > 0).astype(float)
    pred = np.stack([fg, fg], axis=1)
    got = float(mask_loss(torch.as_tensor(pred), torch.as_tensor(labels), [0.5, 0.5], lam=lam))
    assert 0 <= got <= 2 * (-math.log(1 - EPS)) * (1 + lam)


@pytest.fixture
def batch(rng):
    labels = rng.integers(-1, 3, (2, 6, 7))
    pred = rng.uniform(0.01, 0.99, (2, 2, 6, 7))
    return pred, labels


def test_matches_oracle(batch):
    pred, labels = batch
    w = [0.3, 0.7]
    got = float(mask_loss(torch.as_tensor(pred), torch.as_tensor(labels), w, lam=0.8))
    assert got == pytest.approx(loss_oracle(pred, labels, w, 0.8), rel=1e-12)


def test_linear_in_lambda(batch):
    pred, labels = batch
    p, l = torch.as_tensor(pred), torch.as_tensor(labels)
    w = [0.4, 0.6]
    l0 = float(mask_loss(p, l, w, lam=0.0))
    l8 = float(mask_loss(p, l, w, lam=0.8))
    l1 = float(mask_loss(p, l, w, lam=1.0))
    bg = l1 - l0
    assert l8 == pytest.approx(l0 + 0.8 * bg, rel=1e-12)
    assert min(l0, l8, l1) >= 0


def test_discard_rule_exact(batch, rng):
    pred, labels = batch
    p = torch.as_tensor(pred)
    w = [0.4, 0.6]
    base = mask_loss(p, torch.as_tensor(labels), w, lam=0.0, per_class=True)
    # flip pixels of class 2 (channel 1) to ignore: channel 0's partial term must not move
    flipped = labels.copy()
    flipped[labels == 2] = -1
    again = mask_loss(p, torch.as_tensor(flipped), w, lam=0.0, per_class=True)
    assert float(again[0]) == float(base[0])
    flipped = labels.copy()
    flipped[labels == 1] = -1
    again = mask_loss(p, torch.as_tensor(flipped), w, lam=0.0, per_class=True)
    assert float(again[1]) == float(base[1])


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, (1, 5, 5), elements=st.integers(-1, 2)), st.integers(0, 2**31))
def test_nonnegative(labels, seed):
    pred = np.random.default_rng(seed).uniform(0, 1, (1, 2, 5, 5))
    assert float(mask_loss(torch.as_tensor(pred), torch.as_tensor(labels), [0.5, 0.5])) >= 0


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="aligned"):
        mask_loss(torch.zeros(1, 2, 4, 4), torch.zeros(1, 5, 4, dtype=torch.long), [0.5, 0.5])


def test_gradient_finite_difference(batch):
    pred, labels = batch
    p = torch.as_tensor(pred).requires_grad_()
    lab = torch.as_tensor(labels)
    w = [0.35, 0.65]
    (g,) = torch.autograd.grad(mask_loss(p, lab, w), p)
    num = np.zeros_like(pred)
    eps = 1e-6
    for idx in np.ndindex(pred.shape):
        hi, lo = pred.copy(), pred.copy()
        hi[idx] += eps
        lo[idx] -= eps
        num[idx] = (loss_oracle(hi, labels, w, 0.8) - loss_oracle(lo, labels, w, 0.8)) / (2 * eps)
    rel = np.linalg.norm(g.numpy() - num) / np.linalg.norm(num)
    assert rel < 1e-4


# ---------------------------------------------------------------- detection & total

def test_smooth_l1_half():
    assert float(smooth_l1(torch.tensor(0.5))) == pytest.approx(0.125)
    assert float(smooth_l1(torch.tensor(-2.0))) == pytest.approx(1.5)


def test_no_positives_zero_box_loss():
    logits = torch.randn(5, 3)
    l_c, l_b = detection_losses(logits, torch.randn(5, 4), [0, 0, 0, 0, 0], np.zeros((5, 4)))
    assert float(l_b) == 0.0 and float(l_c) > 0


def test_perfect_classes():
    logits = torch.tensor([[50.0, 0, 0], [0, 50.0, 0], [0, 0, 50.0]])
    l_c, _ = detection_losses(logits, torch.zeros(3, 4), [0, 1, 2], np.zeros((3, 4)))
    assert float(l_c) < 1e-12


def test_single_positive_box_loss():
    deltas = torch.tensor([[0.5, 0.0, 0.0, 0.0], [9.0, 9.0, 9.0, 9.0]])
    _, l_b = detection_losses(torch.zeros(2, 3), deltas, [1, 0], np.zeros((2, 4)))
    assert float(l_b) == pytest.approx(0.125)


def test_total_unit_components():
    assert total_loss(1, 1, 1).l_total == 5.0


def test_total_zero():
    assert total_loss(0, 0, 0).l_total == 0.0


def test_total_mixed():
    assert total_loss(0.3, 0.2, 0.1).l_total == pytest.approx(1.0, abs=1e-15)


def test_total_rejects_nonfinite():
    with pytest.raises(NumericError):
        total_loss(float("nan"), 0, 0)


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100))
def test_total_linear_in_mask(lc, lb, lm):
    cfg = LossConfig()
    one = total_loss(lc, lb, lm, cfg)
    two = total_loss(lc, lb, 2 * lm, cfg)
    assert two.l_total - cfg.alpha * lc - cfg.beta * lb == pytest.approx(2 * (one.l_total - cfg.alpha * lc - cfg.beta * lb),
                                                                          rel=1e-12, abs=1e-12)


def test_loss_config_defaults():
    c = LossConfig()
    assert (c.alpha, c.beta, c.gamma, c.lam) == (2, 1, 2, 0.8)
    with pytest.raises(ValueError):
        LossConfig(alpha=0)


# ---------------------------------------------------------------- anchor assignment

def test_match_thresholds():
    iou = np.array([[0.8], [0.55], [0.4], [0.1]])
    targets, matched = match_anchors(iou, np.array([2]))
    np.testing.assert_array_equal(targets, [2, 2, -1, 0])


def test_best_anchor_forced_positive():
    iou = np.array([[0.35], [0.1]])
    targets, _ = match_anchors(iou, np.array([1]))
    np.testing.assert_array_equal(targets, [1, 0])


def test_no_ground_truth_all_background():
    targets, _ = match_anchors(np.zeros((4, 0)), np.zeros(0, int))
    assert np.all(targets == 0)


def test_sample_anchors_caps(rng):
    targets = np.array([1] * 40 + [0] * 100 + [-1] * 10)
    idx = sample_anchors(targets, 32, rng, hard_scores=rng.uniform(0, 1, 150))
    assert len(idx) == 32 and len(set(idx.tolist())) == 32
    assert (targets[idx] > 0).sum() == 16
    assert np.all(targets[idx] >= 0)


def test_sample_anchors_hard_negatives(rng):
    targets = np.array([1] * 2 + [0] * 100)
    scores = np.zeros(102)
    scores[50:65] = 0.9
    idx = sample_anchors(targets, 32, rng, hard_scores=scores, hard_fraction=0.5)
    assert set(range(50, 65)) <= set(idx.tolist())
