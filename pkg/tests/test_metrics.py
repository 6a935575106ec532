import json

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentseg.fusion import SegmentConfig
from latentseg.imaging import LatentImage
from latentseg.metrics import (
    ABLATIONS, PUBLISHED_SD27_FULL, MetricsReport, evaluate, evaluate_ablations, fdr, format_table, iou, mdr,
    write_reports,
)
from latentseg.synthdata import GroundTruthSample


def set_counts(a, b):
    """Independent set-based cardinalities via Python sets of coordinates."""
    sa = {i for i, v in enumerate(a.ravel()) if v}
    sb = {i for i, v in enumerate(b.ravel()) if v}
    return len(sa), len(sb), len(sa & sb), len(sa | sb)


def masks_with(n_a, n_b, n_ab, size=64):
    a = np.zeros(size, bool)
    b = np.zeros(size, bool)
    a[:n_a] = True
    b[n_a - n_ab:n_a - n_ab + n_b] = True
    return a.reshape(8, -1), b.reshape(8, -1)


def test_examples():
    a, b = masks_with(8, 8, 4)
    assert mdr(a, b) == 0.5 and fdr(a, b) == 0.5
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    assert round(iou(a, b), 4) == 0.3333


def test_perfect_and_disjoint(rng):
    m = rng.random((8, 8)) < 0.5
    m[0, 0] = True
    assert (mdr(m, m), fdr(m, m), iou(m, m)) == (0.0, 0.0, 1.0)
    a, b = masks_with(4, 4, 0)
    assert mdr(a, b) == 1.0 and iou(a, b) == 0.0


def test_conventions():
    empty = np.zeros((4, 4), bool)
    full = np.ones((4, 4), bool)
    assert fdr(empty, full) == 0.0
    with pytest.raises(ValueError):
        mdr(full, empty)
    with pytest.raises(ValueError):
        iou(empty, empty)
    with pytest.raises(ValueError, match="shapes"):
        iou(full, np.ones((4, 5), bool))


def test_oracle_equivalence(rng):
    for _ in range(1000):
        a = rng.random((64, 64)) < rng.random()
        b = rng.random((64, 64)) < rng.random()
        b[0, 0] = True
        na, nb, nab, nu = set_counts(a, b)
        assert abs(mdr(a, b) - (nb - nab) / nb) <= 1e-12
        assert abs(fdr(a, b) - ((na - nab) / na if na else 0.0)) <= 1e-12
        assert abs(iou(a, b) - nab / nu) <= 1e-12


nonempty = arrays(bool, (6, 6)).filter(lambda m: m.any())


@given(nonempty, nonempty)
def test_duality_symmetry_range(a, b):
    assert mdr(a, b) == fdr(b, a)
    assert iou(a, b) == iou(b, a)
    for v in (mdr(a, b), fdr(a, b), iou(a, b)):
        assert 0.0 <= v <= 1.0


class Echo:
    """Stands in for a model: ``segment`` is patched to return the truth."""


def test_evaluate_perfect(monkeypatch):
    from latentseg import metrics
    mask = np.zeros((32, 32), bool)
    mask[4:20, 6:30] = True
    sample = GroundTruthSample(LatentImage(np.zeros((32, 32), np.uint8), id="a"), mask)

    class Result:
        pass

    def fake_segment(img, model, config):
        r = Result()
        r.mask = mask.copy()
        return r

    monkeypatch.setattr(metrics, "segment", fake_segment)
    rep = evaluate([sample], Echo(), SegmentConfig(), "full")
    assert (rep.mdr, rep.fdr, rep.iou) == (0.0, 0.0, 1.0)
    assert rep.per_image[0]["id"] == "a" and rep.timing_ms >= 0


def test_evaluate_skips_empty_truth(monkeypatch):
    from latentseg import metrics
    monkeypatch.setattr(metrics, "segment", lambda *a: pytest.fail("should not segment"))
    sample = GroundTruthSample(LatentImage(np.zeros((32, 32), np.uint8), id="b"), np.zeros((32, 32), bool))
    rep = evaluate([sample], Echo())
    assert rep.skipped == ["b"] and rep.per_image == []


def test_ablation_report(small_dataset, default_model, tmp_path):
    reports = evaluate_ablations(small_dataset[:2], default_model)
    assert [r.config_label for r in reports] == ["w/o AM & VF", "with AM", "with VF", "full"]
    assert list(ABLATIONS) == [r.config_label for r in reports]
    for r in reports:
        assert len(r.per_image) == 2 and all("time_ms" in row for row in r.per_image)
        assert r.iou == pytest.approx(np.mean([row["iou"] for row in r.per_image]), abs=1e-9)
    again = evaluate_ablations(small_dataset[:2], default_model)
    assert [r.iou for r in again] == [r.iou for r in reports]
    write_reports(reports, tmp_path / "r.json", tmp_path / "r.txt")
    rows = json.loads((tmp_path / "r.json").read_text())
    assert [row["config_label"] for row in rows] == [r.config_label for r in reports]
    table = (tmp_path / "r.txt").read_text()
    assert all(label in table for label in ABLATIONS) and "Time(ms)" in table


def test_format_table_row():
    text = format_table([MetricsReport("full", 0.1, 0.2, 0.75, 12.5)])
    assert "75.00%" in text and "12.5" in text


def test_reference_constant_is_fraction():
    assert set(PUBLISHED_SD27_FULL) == {"mdr", "fdr", "iou"}
    assert all(0 < v < 1 for v in PUBLISHED_SD27_FULL.values())
