import math
import statistics

import numpy as np
import pytest

from pseudolab.analysis.assign import (
    AnchorLabel,
    AsaParams,
    AssignmentResult,
    AssignState,
    Scene,
    aiou_experiment,
    aiou_trial_values,
    assign_asa,
    assign_atss,
    assign_iou,
    assignment_aiou,
    make_assigner,
)
from pseudolab.analysis.losses import CostParams, cost_matrix
from pseudolab.analysis.pyramid import Anchor
from pseudolab.core.geom import BBox
from pseudolab.core.records import GroundTruth, Prediction
from pseudolab.errors import DomainError
from pseudolab.simulation.scenes import SceneConfig, make_scene

POS = AssignState.POSITIVE
NEG = AssignState.NEGATIVE
IGN = AssignState.IGNORE


def anchors_of(*boxes, levels=None):
    levels = levels or [0] * len(boxes)
    return [Anchor(BBox(*b), lvl) for b, lvl in zip(boxes, levels)]


def gt(*box, cls=0):
    return GroundTruth(BBox(*box), cls)


def states(result):
    return [(l.state, l.gt_index) for l in result.labels]


def result_from_sets(n_anchors, sets):
    labels = [AnchorLabel(NEG)] * n_anchors
    for j, members in enumerate(sets):
        for i in members:
            labels[i] = AnchorLabel(POS, j, 0.0)
    return AssignmentResult(tuple(labels), len(sets))


class TestIouAssigner:
    def test_identical_anchor_is_positive(self):
        r = assign_iou(anchors_of((0, 0, 10, 10)), [gt(0, 0, 10, 10)])
        assert states(r) == [(POS, 0)]
        assert r.labels[0].cost == pytest.approx(0.0)

    def test_disjoint_anchor_is_negative(self):
        r = assign_iou(anchors_of((0, 0, 10, 10), (50, 50, 60, 60)), [gt(0, 0, 10, 10)])
        assert states(r)[1] == (NEG, None)

    def test_between_thresholds_is_ignored(self):
        a = 90 / 11  # IoU a / (10 + a) = 0.45 with both GTs
        anchors = anchors_of((0, 0, 10, 10), (10, 0, 20, 10), (10 - a, 0, 10 + a, 10))
        r = assign_iou(anchors, [gt(0, 0, 10, 10), gt(10, 0, 20, 10)], 0.5, 0.4)
        assert states(r) == [(POS, 0), (POS, 1), (IGN, None)]

    def test_low_quality_rescue(self):
        r = assign_iou(anchors_of((0, 0, 10, 10), (40, 40, 50, 50)), [gt(5, 5, 25, 25)])
        assert states(r) == [(POS, 0), (NEG, None)]

    def test_no_gts(self):
        r = assign_iou(anchors_of((0, 0, 1, 1), (1, 1, 2, 2)), [])
        assert states(r) == [(NEG, None), (NEG, None)]

    def test_threshold_order_enforced(self):
        with pytest.raises(DomainError):
            assign_iou(anchors_of((0, 0, 1, 1)), [gt(0, 0, 1, 1)], 0.3, 0.4)


class TestAtss:
    def test_single_candidate_meets_threshold(self):
        r = assign_atss(anchors_of((0, 0, 10, 9)), [gt(0, 0, 10, 10)])
        assert states(r) == [(POS, 0)]

    def test_center_outside_is_negative(self):
        r = assign_atss(anchors_of((5, 5, 25, 25)), [gt(0, 0, 10, 10)])
        assert states(r) == [(NEG, None)]

    def test_two_level_scene(self):
        anchors = anchors_of((0, 0, 8, 8), (8, 0, 16, 8), (0, 0, 16, 16), (16, 0, 32, 16), levels=[0, 0, 1, 1])
        ious = [0.6, 16 / 112, 0.25, 0.0]
        threshold = statistics.fmean(ious) + statistics.pstdev(ious)
        assert ious[0] >= threshold and max(ious[1:]) < threshold
        r = assign_atss(anchors, [gt(2, 0, 10, 8)], topk_per_level=2)
        assert states(r) == [(POS, 0), (NEG, None), (NEG, None), (NEG, None)]

    def test_conflict_goes_to_higher_iou(self):
        anchors = anchors_of((0, 0, 10, 10))
        r = assign_atss(anchors, [gt(1, 1, 12, 12), gt(0, 0, 10, 11)])
        assert states(r) == [(POS, 1)]

    def test_no_gts(self):
        assert states(assign_atss(anchors_of((0, 0, 1, 1)), [])) == [(NEG, None)]

    def test_topk_validated(self):
        with pytest.raises(DomainError):
            assign_atss(anchors_of((0, 0, 1, 1)), [gt(0, 0, 1, 1)], topk_per_level=0)


def preds_of(*items):
    return [Prediction(i, tuple(probs), BBox(*box)) for i, (probs, box) in enumerate(items)]


class TestAsa:
    def test_perfect_prediction_costs_only_the_prior(self):
        anchors = anchors_of((0, 0, 10, 10))
        r = assign_asa(anchors, preds_of(([1.0], (2, 2, 12, 12))), [gt(2, 2, 12, 12)])
        assert states(r) == [(POS, 0)]
        assert r.labels[0].cost == pytest.approx(0.001 * 2 * math.sqrt(2), abs=1e-9)

    def test_single_cheapest_anchor(self):
        anchors = anchors_of((0, 0, 10, 10), (5, 5, 15, 15), (20, 20, 30, 30))
        preds = preds_of(([0.4], (1, 1, 11, 11)), ([0.8], (2, 3, 12, 12)), ([0.9], (20, 20, 30, 30)))
        gts = [gt(2, 2, 12, 12)]
        costs = cost_matrix(preds, gts, CostParams(), anchors=[a.bbox for a in anchors])[:, 0]
        best = sorted(range(3), key=lambda i: (costs[i], i))[0]
        r = assign_asa(anchors, preds, gts, AsaParams(k=1))
        assert [i for i, l in enumerate(r.labels) if l.state is POS] == [best]

    def test_shared_anchor_goes_to_cheaper_gt(self):
        anchors = anchors_of((0, 0, 10, 10), (50, 50, 60, 60), (70, 70, 80, 80))
        preds = preds_of(([0.9], (0, 0, 10, 10)), ([0.1], (50, 50, 60, 60)), ([0.1], (70, 70, 80, 80)))
        r = assign_asa(anchors, preds, [gt(0, 0, 10, 10), gt(1, 1, 11, 11)], AsaParams(k=1))
        assert states(r) == [(POS, 0), (NEG, None), (NEG, None)]
        assert r.positives(1) == frozenset()

    def test_k_is_clamped(self):
        anchors = anchors_of((0, 0, 10, 10), (5, 5, 15, 15))
        preds = preds_of(([0.5], (0, 0, 10, 10)), ([0.5], (5, 5, 15, 15)))
        r = assign_asa(anchors, preds, [gt(0, 0, 10, 10)], AsaParams(k=13))
        assert r.num_positive == 2

    def test_noise_free_scene_ranks_by_distance(self):
        box = (40, 40, 60, 60)
        anchors = [Anchor(BBox.from_center(x, y, 16, 16)) for y in range(4, 100, 8) for x in range(4, 100, 8)]
        preds = [Prediction(i, (0.7,), BBox(*box)) for i in range(len(anchors))]
        r = assign_asa(anchors, preds, [gt(*box)], AsaParams(k=5))
        dists = [math.dist(a.bbox.center, (50, 50)) for a in anchors]
        expected = sorted(range(len(anchors)), key=lambda i: (dists[i], i))[:5]
        assert r.positives(0) == frozenset(expected)

    def test_joint_lambda_scaling_keeps_positives(self):
        scene = make_scene(SceneConfig(prob_noise=0.0), seed=3)
        preds = [Prediction(p.anchor_index, (0.5,), p.bbox) for p in scene.predictions]
        a = assign_asa(scene.anchors, preds, scene.gts, AsaParams(2.0, 0.001, 9))
        b = assign_asa(scene.anchors, preds, scene.gts, AsaParams(6.0, 0.003, 9))
        assert states(a) == states(b)

    def test_positive_budget(self):
        scene = make_scene(SceneConfig(), seed=5)
        r = assign_asa(scene.anchors, scene.predictions, scene.gts, AsaParams(k=7))
        assert r.num_positive <= 7 * len(scene.gts)
        owners = [l.gt_index for l in r.labels if l.state is POS]
        assert sum(len(r.positives(j)) for j in range(len(scene.gts))) == len(owners)

    def test_one_prediction_per_anchor(self):
        with pytest.raises(DomainError):
            assign_asa(anchors_of((0, 0, 1, 1), (1, 1, 2, 2)), preds_of(([0.5], (0, 0, 1, 1))), [gt(0, 0, 1, 1)])

    def test_no_gts(self):
        anchors = anchors_of((0, 0, 1, 1))
        assert states(assign_asa(anchors, preds_of(([0.5], (0, 0, 1, 1))), [])) == [(NEG, None)]


class TestAssignmentAiou:
    def test_identical(self):
        r = result_from_sets(5, [{1, 2}])
        assert assignment_aiou(r, r, 0) == 1.0

    def test_partial(self):
        a, b = result_from_sets(6, [{1, 2, 3}]), result_from_sets(6, [{2, 3, 4}])
        assert assignment_aiou(a, b, 0) == 0.5
        assert assignment_aiou(b, a, 0) == 0.5

    def test_disjoint(self):
        assert assignment_aiou(result_from_sets(4, [{0}]), result_from_sets(4, [{1}]), 0) == 0.0

    def test_both_empty(self):
        assert assignment_aiou(result_from_sets(3, [set()]), result_from_sets(3, [set()]), 0) == 1.0

    def test_invalid_gt_index(self):
        r = result_from_sets(3, [{0}])
        with pytest.raises(DomainError):
            assignment_aiou(r, r, 1)

    def test_anchor_count_mismatch(self):
        with pytest.raises(DomainError):
            assignment_aiou(result_from_sets(3, [{0}]), result_from_sets(4, [{0}]), 0)

    def test_invalid_positive_reference(self):
        with pytest.raises(DomainError):
            AssignmentResult((AnchorLabel(POS, 2, 0.0),), 1)

    def test_positive_without_gt_reference(self):
        with pytest.raises(DomainError):
            AssignmentResult((AnchorLabel(POS, None, 0.0),), 1)


class TestAiouExperiment:
    SCENE = make_scene(SceneConfig(), seed=7)

    @pytest.mark.parametrize("name", ["iou", "atss", "asa"])
    def test_zero_noise_is_perfect(self, name):
        rows = aiou_experiment(self.SCENE, make_assigner(name), [0.0], trials=3, seed=1, threads=1)
        assert rows[0].mean_aiou == 1.0
        assert rows[0].std_aiou == 0.0

    def test_deterministic_across_threads(self):
        assigner = make_assigner("atss")
        one = aiou_experiment(self.SCENE, assigner, [0.1, 0.3], trials=8, seed=2, threads=1)
        four = aiou_experiment(self.SCENE, assigner, [0.1, 0.3], trials=8, seed=2, threads=4)
        assert one == four

    def test_trial_values_match_experiment(self):
        assigner = make_assigner("iou")
        rows = aiou_experiment(self.SCENE, assigner, [0.2, 0.4], trials=6, seed=9, threads=1)
        values = aiou_trial_values(self.SCENE, assigner, 0.4, 1, 6, 9)
        assert rows[1].mean_aiou == pytest.approx(float(values.mean()), abs=1e-15)

    def test_more_noise_lowers_iou_assigner_consistency(self):
        rows = aiou_experiment(self.SCENE, make_assigner("iou"), [0.1, 0.5], trials=100, seed=0, threads=1)
        assert rows[1].mean_aiou <= rows[0].mean_aiou

    def test_trials_validated(self):
        with pytest.raises(DomainError):
            aiou_experiment(self.SCENE, make_assigner("iou"), [0.1], trials=0)

    def test_unknown_assigner(self):
        with pytest.raises(DomainError):
            make_assigner("ota")


def test_empty_scene_has_nothing_to_disagree_on():
    scene = Scene(tuple(anchors_of((0, 0, 1, 1))), tuple(preds_of(([0.5], (0, 0, 1, 1)))), ())
    rows = aiou_experiment(scene, make_assigner("asa"), [0.3], trials=2, threads=1)
    assert rows[0].mean_aiou == 1.0
