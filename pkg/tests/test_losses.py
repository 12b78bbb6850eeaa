"""Loss values against closed forms, metric identities, AUC pairwise oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from causalseg import losses as L
from causalseg import tensor as T


def brute_auc(scores, labels):
    """All-pairs Mann-Whitney count: ties score one half."""
    pos = scores[labels]
    neg = scores[~labels]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (pos.size * neg.size)


class TestBce:
    def test_matching_prediction_tiny(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert L.bce_loss(T.Tensor(y.copy()), y).item() <= 1e-6

    def test_half_prediction_is_ln2(self):
        assert abs(L.bce_loss(T.Tensor(np.array([0.5])), np.array([1.0])).item()
                   - math.log(2.0)) < 1e-12

    def test_half_prediction_ignores_truth(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            y = (rng.random(16) < 0.5).astype(np.float64)
            got = L.bce_loss(T.Tensor(np.full(16, 0.5)), y).item()
            assert abs(got - math.log(2.0)) < 1e-12

    def test_confident_wrong_prediction_clamped(self):
        got = L.bce_loss(T.Tensor(np.array([0.0])), np.array([1.0])).item()
        assert abs(got - (-math.log(L.PROB_EPS))) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            L.bce_loss(T.Tensor(np.zeros(3)), np.zeros(4))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        y = (rng.random((6, 6)) < 0.5).astype(np.float64)
        pred = T.Tensor(rng.uniform(0.2, 0.8, size=(6, 6)), requires_grad=True)
        assert T.finite_diff_check(lambda p: L.bce_loss(p[0], y), [pred]) < 1e-6


class TestDice:
    def test_exact_match_zero(self):
        y = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert L.dice_loss(T.Tensor(y.copy()), y).item() <= 1e-6

    def test_disjoint_is_one(self):
        y = np.array([1.0, 1.0, 0.0, 0.0])
        p = np.array([0.0, 0.0, 1.0, 1.0])
        assert abs(L.dice_loss(T.Tensor(p), y).item() - 1.0) <= 1e-6

    def test_half_overlap(self):
        y = np.array([1.0, 1.0, 0.0, 0.0])
        p = np.array([1.0, 0.0, 1.0, 0.0])
        assert abs(L.dice_loss(T.Tensor(p), y).item() - 0.5) < 1e-6

    def test_empty_vs_empty_zero_loss(self):
        z = np.zeros(8)
        assert L.dice_loss(T.Tensor(z.copy()), z).item() == 0.0

    @given(hnp.arrays(np.float64, 12, elements=st.floats(0.0, 1.0)),
           hnp.arrays(np.int8, 12, elements=st.integers(0, 1)))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, pred, truth):
        val = L.dice_loss(T.Tensor(pred), truth.astype(np.float64)).item()
        assert -1e-9 <= val <= 1.0 + 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        y = (rng.random((6, 6)) < 0.5).astype(np.float64)
        pred = T.Tensor(rng.uniform(0.2, 0.8, size=(6, 6)), requires_grad=True)
        assert T.finite_diff_check(lambda p: L.dice_loss(p[0], y), [pred]) < 1e-6


class TestTotalLoss:
    def scalars(self, *values):
        return [T.Tensor(np.asarray(v, dtype=np.float64)) for v in values]

    def test_composition(self):
        bce, dice, kl, usd = self.scalars(0.1, 0.2, 0.3, 0.4)
        bundle = L.total_loss(bce, dice, kl=kl, usd=usd)
        assert abs(bundle.gaus.item() - 0.7) < 1e-12
        assert abs(bundle.total.item() - 1.0) < 1e-12
        got = bundle.values()
        assert abs(got["gaus"] - (got["usd"] + got["kl"])) < 1e-15
        assert abs(got["total"] - (got["gaus"] + got["bce"] + got["dice"])) < 1e-15

    def test_all_zero(self):
        bundle = L.total_loss(*self.scalars(0.0, 0.0), kl=None, usd=None)
        assert bundle.total.item() == 0.0

    def test_missing_parts_default_to_zero(self):
        bce, dice = self.scalars(0.25, 0.5)
        bundle = L.total_loss(bce, dice)
        assert bundle.kl.item() == 0.0 and bundle.usd.item() == 0.0
        assert abs(bundle.total.item() - 0.75) < 1e-12

    def test_nonfinite_part_named(self):
        bce, dice, usd = self.scalars(0.1, 0.2, np.nan)
        with pytest.raises(T.NonFiniteError, match="usd"):
            L.total_loss(bce, dice, usd=usd)

    def test_gradient_is_sum_of_part_gradients(self):
        rng = np.random.default_rng(3)
        y = (rng.random(16) < 0.5).astype(np.float64)
        base = rng.uniform(0.2, 0.8, size=16)

        pred = T.Tensor(base.copy(), requires_grad=True)
        bundle = L.total_loss(L.bce_loss(pred, y), L.dice_loss(pred, y))
        T.backward(bundle.total)

        pred_b = T.Tensor(base.copy(), requires_grad=True)
        T.backward(L.bce_loss(pred_b, y))
        pred_d = T.Tensor(base.copy(), requires_grad=True)
        T.backward(L.dice_loss(pred_d, y))
        np.testing.assert_allclose(pred.grad, pred_b.grad + pred_d.grad, atol=1e-12)


class TestMetrics:
    def test_hand_counts(self):
        pred = np.array([[0.9, 0.5], [0.4, 0.1]])
        truth = np.array([[1.0, 0.0], [1.0, 0.0]])
        c = L.confusion_counts(pred, truth)
        # 0.5 thresholds as positive: TP {0.9}, FP {0.5}, FN {0.4}, TN {0.1}
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 1)
        m = L.metrics(pred, truth)
        assert abs(m.dice - 0.5) < 1e-12
        assert abs(m.iou - 1 / 3) < 1e-12
        assert abs(m.fdr - 0.5) < 1e-12

    def test_perfect_prediction(self):
        truth = np.array([[1.0, 0.0], [0.0, 1.0]])
        m = L.metrics(truth.copy(), truth)
        assert m.dice == 1.0 and m.iou == 1.0 and m.fdr == 0.0 and m.auc == 1.0
        assert not m.auc_degenerate

    def test_two_pixel_example(self):
        m = L.metrics(np.array([0.9, 0.1]), np.array([1.0, 0.0]))
        assert m.auc == 1.0 and m.fdr == 0.0

    def test_constant_prediction_ties(self):
        truth = np.array([1.0, 0.0, 1.0, 0.0])
        m = L.metrics(np.full(4, 0.5), truth)
        assert abs(m.auc - 0.5) < 1e-12

    def test_degenerate_truth_flagged(self):
        m = L.metrics(np.array([0.9, 0.1]), np.array([0.0, 0.0]))
        assert m.auc == 0.5 and m.auc_degenerate

    def test_empty_vs_empty(self):
        m = L.metrics(np.zeros(9), np.zeros(9))
        assert m.dice == 1.0 and m.iou == 1.0 and m.fdr == 0.0

    def test_fdr_zero_when_nothing_predicted(self):
        m = L.metrics(np.zeros(4), np.array([1.0, 0.0, 1.0, 0.0]))
        assert m.fdr == 0.0

    @given(hnp.arrays(np.float64, 24, elements=st.floats(0.0, 1.0)),
           hnp.arrays(np.int8, 24, elements=st.integers(0, 1)))
    @settings(max_examples=100, deadline=None)
    def test_dice_iou_identity(self, pred, truth):
        m = L.metrics(pred, truth.astype(np.float64))
        assert abs(m.dice - 2.0 * m.iou / (1.0 + m.iou)) < 1e-9

    def test_auc_matches_pairwise_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            # quantized scores force plenty of ties
            scores = rng.integers(0, 5, size=30) / 4.0
            labels = rng.random(30) < 0.5
            if labels.all() or not labels.any():
                continue
            got, degenerate = L.auc_score(scores, labels.astype(np.float64))
            assert not degenerate
            assert abs(got - brute_auc(scores, labels)) < 1e-12

    def test_auc_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(5)
        scores = rng.random(40)
        labels = (rng.random(40) < 0.4).astype(np.float64)
        base, _ = L.auc_score(scores, labels)
        warped, _ = L.auc_score(np.exp(3.0 * scores) + 7.0, labels)
        assert abs(base - warped) < 1e-12

    def test_ranges(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            pred = rng.random(16)
            truth = (rng.random(16) < 0.5).astype(np.float64)
            m = L.metrics(pred, truth)
            for value in (m.dice, m.iou, m.fdr, m.auc):
                assert 0.0 <= value <= 1.0


class TestEntropyMap:
    def test_half_is_one_bit(self):
        np.testing.assert_array_equal(L.entropy_map(np.full((3, 3), 0.5)), np.ones((3, 3)))

    def test_binary_is_zero(self):
        pred = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(L.entropy_map(pred), np.zeros((2, 2)))

    def test_quarter_closed_form(self):
        expected = -0.25 * math.log2(0.25) - 0.75 * math.log2(0.75)
        assert abs(L.entropy_map(np.array([0.25]))[0] - expected) < 1e-12
        assert abs(L.entropy_map(np.array([0.25]))[0] - 0.811278) < 1e-6

    @given(hnp.arrays(np.float64, 8, elements=st.floats(0.0, 1.0)))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded(self, pred):
        ent = L.entropy_map(pred)
        np.testing.assert_allclose(ent, L.entropy_map(1.0 - pred), atol=1e-12)
        assert np.all(ent >= 0.0) and np.all(ent <= 1.0 + 1e-12)
