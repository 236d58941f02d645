import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pseudolab.analysis.losses import (
    CostParams,
    FocalParams,
    binary_cross_entropy,
    combined_loss,
    cost_matrix,
    focal_loss,
    focal_loss_grad,
    giou_loss,
    quality_focal_loss,
)
from pseudolab.core.geom import BBox
from pseudolab.core.records import GroundTruth, Prediction
from pseudolab.errors import DomainError

LN2 = math.log(2)


class TestFocal:
    def test_perfect_prediction(self):
        assert focal_loss(1 - 1e-7, 1) == pytest.approx(0.0, abs=1e-12)

    def test_positive_half(self):
        assert focal_loss(0.5, 1) == pytest.approx(0.25 * 0.25 * LN2, abs=1e-9)

    def test_negative_half(self):
        assert focal_loss(0.5, 0) == pytest.approx(0.75 * 0.25 * LN2, abs=1e-9)

    @given(st.floats(0.01, 0.99))
    def test_reduces_to_bce(self, p):
        fp = FocalParams(gamma=0.0, alpha=0.5)
        assert focal_loss(p, 1, fp) == pytest.approx(0.5 * binary_cross_entropy(p, 1.0), abs=1e-12)
        assert focal_loss(p, 0, fp) == pytest.approx(0.5 * binary_cross_entropy(p, 0.0), abs=1e-12)

    def test_vectorized(self):
        out = focal_loss(np.array([0.5, 0.5]), np.array([1, 0]))
        np.testing.assert_allclose(out, [0.25 * 0.25 * LN2, 0.75 * 0.25 * LN2])

    @pytest.mark.parametrize("fp", [FocalParams(), FocalParams(0.0, 0.5), FocalParams(1.5, 0.7)])
    @pytest.mark.parametrize("target", [0, 1])
    def test_gradient_matches_finite_differences(self, fp, target):
        h = 1e-6
        for p in np.linspace(0.05, 0.95, 19):
            numeric = (focal_loss(p + h, target, fp) - focal_loss(p - h, target, fp)) / (2 * h)
            assert focal_loss_grad(p, target, fp) == pytest.approx(numeric, rel=1e-4)

    def test_monotone_in_p_t(self):
        ps = np.linspace(0.05, 0.95, 50)
        assert np.all(np.diff(focal_loss(ps, np.ones_like(ps))) < 0)

    def test_bad_params(self):
        with pytest.raises(DomainError):
            FocalParams(gamma=-1.0)
        with pytest.raises(DomainError):
            FocalParams(alpha=1.5)


class TestQualityFocal:
    def test_perfect(self):
        assert quality_focal_loss(1 - 1e-7, 1 - 1e-7) == pytest.approx(0.0, abs=1e-12)

    def test_half_against_one(self):
        assert quality_focal_loss(0.5, 1.0) == pytest.approx(0.25 * LN2, abs=1e-9)

    def test_matching_quality(self):
        assert quality_focal_loss(0.3, 0.3) == 0.0

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_non_negative(self, p, q):
        assert quality_focal_loss(p, q) >= 0.0


class TestGiouLoss:
    def test_identical(self):
        assert giou_loss(BBox(0, 0, 2, 2), BBox(0, 0, 2, 2)) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint(self):
        assert giou_loss(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == pytest.approx(1 + 7 / 9, abs=1e-9)

    def test_overlap(self):
        assert giou_loss(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == pytest.approx(1 - (1 / 7 - 2 / 9), abs=1e-9)


def _pred(i, probs, box):
    return Prediction(i, tuple(probs), BBox(*box))


class TestCostMatrix:
    def test_worked_pair(self):
        preds = [_pred(0, [0.5], (0, 0, 2, 2))]
        gts = [GroundTruth(BBox(1, 1, 3, 3), 0)]
        c = cost_matrix(preds, gts, CostParams(2.0, 0.0), anchors=[BBox(0, 0, 2, 2)])
        expected = 0.25 * 0.25 * LN2 + 2 * (1 - (1 / 7 - 2 / 9))
        assert c[0, 0] == pytest.approx(expected, abs=1e-9)
        assert c[0, 0] == pytest.approx(2.2021, abs=1e-4)

    def test_perfect_prediction_costs_nothing(self):
        box = (10, 10, 20, 20)
        c = cost_matrix([_pred(0, [1.0], box)], [GroundTruth(BBox(*box), 0)], CostParams(2.0, 0.0), anchors=[BBox(*box)])
        assert c[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_zero_weights_leave_classification(self):
        preds = [_pred(0, [0.2, 0.7], (0, 0, 4, 4)), _pred(1, [0.9, 0.1], (5, 5, 9, 9))]
        gts = [GroundTruth(BBox(0, 0, 3, 3), 1), GroundTruth(BBox(6, 6, 9, 9), 0)]
        c = cost_matrix(preds, gts, CostParams(0.0, 0.0), anchors=[p.bbox for p in preds])
        np.testing.assert_allclose(c[:, 0], focal_loss(np.array([0.7, 0.1]), np.ones(2)))
        np.testing.assert_allclose(c[:, 1], focal_loss(np.array([0.2, 0.9]), np.ones(2)))

    def test_terms_decompose_and_grow_with_lambda_reg(self):
        preds = [_pred(0, [0.6], (0, 0, 4, 4)), _pred(1, [0.3], (2, 2, 8, 8))]
        anchors = [BBox(1, 1, 3, 3), BBox(4, 4, 6, 6)]
        gts = [GroundTruth(BBox(1, 0, 5, 4), 0)]
        base = cost_matrix(preds, gts, CostParams(0.0, 0.0), anchors=anchors)
        reg = cost_matrix(preds, gts, CostParams(1.0, 0.0), anchors=anchors) - base
        dist = cost_matrix(preds, gts, CostParams(0.0, 1.0), anchors=anchors) - base
        full = cost_matrix(preds, gts, CostParams(2.0, 0.5), anchors=anchors)
        np.testing.assert_allclose(full, base + 2.0 * reg + 0.5 * dist, atol=1e-12)
        assert np.all(cost_matrix(preds, gts, CostParams(3.0, 0.5), anchors=anchors) >= full)

    def test_qfl_classification_cost(self):
        preds = [_pred(0, [0.5], (0, 0, 2, 2))]
        gts = [GroundTruth(BBox(0, 0, 2, 2), 0)]
        c = cost_matrix(preds, gts, CostParams(0.0, 0.0), anchors=[BBox(0, 0, 2, 2)], cls_cost="qfl")
        assert c[0, 0] == pytest.approx(quality_focal_loss(0.5, 1.0), abs=1e-12)

    def test_empty_gts(self):
        assert cost_matrix([_pred(0, [0.5], (0, 0, 1, 1))], [], anchors=[BBox(0, 0, 1, 1)]).shape == (1, 0)

    def test_mismatched_anchor_count(self):
        with pytest.raises(DomainError):
            cost_matrix([_pred(0, [0.5], (0, 0, 1, 1))], [GroundTruth(BBox(0, 0, 1, 1), 0)], anchors=[])

    def test_class_out_of_range(self):
        with pytest.raises(DomainError):
            cost_matrix([_pred(0, [0.5], (0, 0, 1, 1))], [GroundTruth(BBox(0, 0, 1, 1), 3)], anchors=[BBox(0, 0, 1, 1)])

    def test_unknown_classification_cost(self):
        with pytest.raises(DomainError):
            cost_matrix([_pred(0, [0.5], (0, 0, 1, 1))], [GroundTruth(BBox(0, 0, 1, 1), 0)],
                        anchors=[BBox(0, 0, 1, 1)], cls_cost="ce")


class TestCombined:
    def test_supervised_only(self):
        assert combined_loss(1.0, 2.0, 5.0, 7.0, lambda_u=0.0) == 3.0

    def test_default_weight(self):
        assert combined_loss(1, 1, 1, 1) == 6

    def test_zeros(self):
        assert combined_loss(0, 0, 0, 0) == 0

    def test_unsupervised_regression_weight(self):
        assert combined_loss(1, 1, 1, 1, lambda_u=2.0, unsup_reg_weight=0.5) == pytest.approx(5.0)
