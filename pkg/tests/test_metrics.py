import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iscfseg.metrics import ConfusionCounts, MetricsReport, confusion, metrics


def hand_case():
    gt = np.zeros((1, 4, 4), np.uint8)
    gt[0, 0, :4] = 1
    gt[0, 1, :2] = 1  # 6 positives
    pred = np.zeros((1, 4, 4))
    pred[0, 1, :2] = 0.9  # overlap 2
    pred[0, 3, :2] = 0.7  # 2 false positives
    return pred, gt


class TestConfusion:
    def test_hand_counted(self):
        pred, gt = hand_case()
        assert confusion(pred, gt) == ConfusionCounts(tp=2, fp=2, tn=8, fn=4)

    def test_perfect(self, rng):
        gt = (rng.random((1, 8, 8)) < 0.4).astype(np.uint8)
        c = confusion(gt.astype(float), gt)
        assert c.fp == c.fn == 0

    def test_empty(self):
        c = confusion(np.zeros((1, 5, 7)), np.zeros((1, 5, 7), np.uint8))
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 0, 35)

    def test_threshold_inclusive(self):
        c = confusion(np.array([[[0.5, 0.49]]]), np.array([[[1, 0]]], np.uint8))
        assert (c.tp, c.tn) == (1, 1)

    def test_non_binary_mask(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((1, 2, 2)), np.full((1, 2, 2), 2, np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((1, 2, 2)), np.zeros((1, 2, 3), np.uint8))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(-1, 0, 0, 0)


class TestMetrics:
    def test_hand_arithmetic(self):
        dsc, se, sp, acc = metrics(ConfusionCounts(tp=2, fp=2, tn=8, fn=4))
        assert dsc == pytest.approx(0.4)
        assert se == pytest.approx(1 / 3)
        assert sp == pytest.approx(0.8)
        assert acc == pytest.approx(0.625)

    def test_perfect(self):
        assert metrics(ConfusionCounts(5, 0, 11, 0)) == (1.0, 1.0, 1.0, 1.0)

    def test_all_wrong_balanced(self):
        gt = np.zeros((1, 2, 4), np.uint8)
        gt[0, 0] = 1
        dsc, _, _, acc = metrics(confusion(1.0 - gt, gt))
        assert dsc == 0 and acc == 0

    def test_empty_class_convention(self):
        assert metrics(ConfusionCounts(0, 0, 16, 0)) == (1.0, 1.0, 1.0, 1.0)

    @settings(max_examples=200)
    @given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
    def test_dice_is_f1_and_bounded(self, tp, fp, tn, fn):
        c = ConfusionCounts(tp, fp, tn, fn)
        vals = metrics(c)
        assert all(0.0 <= v <= 1.0 for v in vals)
        if tp + fp > 0 and tp + fn > 0 and tp > 0:
            prec, rec = tp / (tp + fp), tp / (tp + fn)
            assert vals[0] == pytest.approx(2 * prec * rec / (prec + rec), abs=1e-12)

    @given(st.integers(1, 50), st.integers(0, 50), st.integers(1, 50), st.integers(0, 50), st.integers(2, 9))
    def test_scale_free(self, tp, fp, tn, fn, k):
        a = metrics(ConfusionCounts(tp, fp, tn, fn))
        b = metrics(ConfusionCounts(k * tp, k * fp, k * tn, k * fn))
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestReport:
    def test_means_are_arithmetic(self, rng):
        rep = MetricsReport()
        rows = []
        for i in range(6):
            gt = (rng.random((1, 6, 6)) < 0.4).astype(np.uint8)
            c = confusion(rng.random((1, 6, 6)), gt)
            rep.add(f"img{i}", c)
            rows.append(metrics(c))
        rows = np.array(rows)
        assert rep.mean_dsc == pytest.approx(rows[:, 0].mean(), abs=1e-9)
        assert rep.mean_se == pytest.approx(rows[:, 1].mean(), abs=1e-9)
        assert rep.mean_sp == pytest.approx(rows[:, 2].mean(), abs=1e-9)
        assert rep.mean_acc == pytest.approx(rows[:, 3].mean(), abs=1e-9)

    def test_to_dict_sorted(self):
        rep = MetricsReport()
        rep.add("b", ConfusionCounts(1, 0, 1, 0))
        rep.add("a", ConfusionCounts(0, 1, 1, 0))
        d = rep.to_dict()
        assert [r["id"] for r in d["per_image"]] == ["a", "b"]
