import numpy as np
import pytest

from latentseg import kernels
from latentseg.kernels import numba_backend, numpy_backend

BACKENDS = [numpy_backend, numba_backend]


def random_boxes(rng, n, size=100.0):
    xy = rng.uniform(0, size, (n, 2))
    wh = rng.uniform(1, size / 2, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def test_backend_flag_default():
    assert kernels.BACKEND_NAME in {"numba", "numpy"}


def test_env_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("LATENTSEG_NUMBA", "0")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND_NAME == "numpy"
        assert mod.iou_matrix is numpy_backend.iou_matrix
    finally:
        monkeypatch.delenv("LATENTSEG_NUMBA")
        importlib.reload(kernels)


def test_iou_matrix_backends_agree(rng):
    a, b = random_boxes(rng, 40), random_boxes(rng, 25)
    np.testing.assert_allclose(numba_backend.iou_matrix(a, b), numpy_backend.iou_matrix(a, b), atol=1e-12)


def test_iou_matrix_known_value():
    out = numpy_backend.iou_matrix([[0, 0, 10, 10]], [[0, 5, 10, 15], [20, 20, 30, 30]])
    np.testing.assert_allclose(out, [[50 / 150, 0.0]])


@pytest.mark.parametrize("thr", [0.1, 0.3, 0.5, 0.8])
def test_nms_backends_agree(rng, thr):
    boxes = random_boxes(rng, 200)
    order = np.argsort(-rng.random(200))
    np.testing.assert_array_equal(
        numba_backend.nms_keep(boxes, order, thr), numpy_backend.nms_keep(boxes, order, thr)
    )


def test_covered_area_backends_agree(rng):
    for _ in range(200):
        box = random_boxes(rng, 1)[0]
        regions = random_boxes(rng, rng.integers(0, 5))
        assert numba_backend.covered_area(box, regions) == pytest.approx(
            numpy_backend.covered_area(box, regions), abs=1e-9
        )


def test_covered_area_overlapping_regions_counted_once():
    for be in BACKENDS:
        assert be.covered_area([0, 0, 10, 10], [[0, 0, 6, 10], [4, 0, 10, 10]]) == pytest.approx(100.0)
        assert be.covered_area([0, 0, 10, 10], np.zeros((0, 4))) == 0.0


def test_bilinear_resize_backends_agree(rng):
    src = rng.random((7, 5))
    for oh, ow in [(7, 5), (14, 10), (3, 9), (1, 1)]:
        np.testing.assert_allclose(numba_backend.bilinear_resize(src, oh, ow),
                                   numpy_backend.bilinear_resize(src, oh, ow), atol=1e-12)


def test_bilinear_resize_identity(rng):
    src = rng.random((6, 4))
    for be in BACKENDS:
        np.testing.assert_allclose(be.bilinear_resize(src, 6, 4), src, atol=1e-15)


def test_vote_and_overlap_counts_agree(rng):
    stack = rng.random((4, 16, 16)) < 0.5
    np.testing.assert_array_equal(numba_backend.vote_count(stack), numpy_backend.vote_count(stack))
    a, b = stack[0], stack[1]
    assert numba_backend.overlap_counts(a, b) == numpy_backend.overlap_counts(a, b)


def test_equalize_lut_agree(rng):
    for px in [rng.integers(0, 256, (40, 40)), rng.integers(60, 90, (33, 35)), np.full((32, 32), 7)]:
        px = px.astype(np.uint8)
        np.testing.assert_array_equal(numba_backend.equalize_lut(px), numpy_backend.equalize_lut(px))
