import numpy as np
import pytest

from polardet.errors import NoClasses, UndefinedRecall
from polardet.evaluation import (average_precision, evaluate, match_detections,
                                 mean_ap, precision_recall_curve, PRPoint)
from polardet.geometry import QuadBox
from polardet.postprocess import Detection

from oracles import voc_ap_reference


def square(cx, cy, size=4.0, class_id=0):
    half = size / 2
    return QuadBox(np.array([[cx - half, cy - half], [cx + half, cy - half],
                             [cx + half, cy + half], [cx - half, cy + half]]),
                   class_id=class_id)


def det(cx, cy, score, size=4.0, class_id=0):
    return Detection(square(cx, cy, size, class_id), class_id, score)


class TestMatchDetections:
    def test_perfect_overlap_is_tp(self):
        flags = match_detections([det(10, 10, 0.9)], [square(10, 10)], 0.5)
        assert flags == [True]

    def test_disjoint_is_fp(self):
        flags = match_detections([det(10, 10, 0.9)], [square(30, 30)], 0.5)
        assert flags == [False]

    def test_each_gt_claimed_once(self):
        dets = [det(10, 10, 0.9), det(10.2, 10, 0.8)]
        flags = match_detections(dets, [square(10, 10)], 0.5)
        assert flags == [True, False]

    def test_higher_score_claims_first(self):
        dets = [det(10.2, 10, 0.6), det(10, 10, 0.9)]
        flags = match_detections(dets, [square(10, 10)], 0.5)
        # the 0.9 detection wins the only gt; flags stay in input order
        assert flags == [False, True]

    def test_matches_highest_iou_gt(self):
        # detection halfway between two gts, much closer to the second
        gts = [square(14, 10), square(11, 10)]
        flags = match_detections([det(10, 10, 0.9)], gts, 0.2)
        # the second gt is taken, so an exact det on it later is unmatched
        flags2 = match_detections([det(10, 10, 0.9), det(11, 10, 0.5)], gts, 0.2)
        assert flags == [True]
        assert flags2 == [True, False]

    def test_iou_below_threshold_is_fp(self):
        # 4x4 squares 2 apart: inter 8, union 24, IoU 1/3
        flags = match_detections([det(12, 10, 0.9)], [square(10, 10)], 0.5)
        assert flags == [False]

    def test_class_mismatch_never_matches(self):
        flags = match_detections([det(10, 10, 0.9, class_id=1)],
                                 [square(10, 10, class_id=0)], 0.1)
        assert flags == [False]

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            match_detections([], [], 0.0)
        with pytest.raises(ValueError):
            match_detections([], [], 1.5)


class TestPrecisionRecallCurve:
    def test_hand_case(self):
        points = precision_recall_curve([0.9, 0.8, 0.7], [True, False, True], 2)
        assert [(p.recall, p.precision) for p in points] == [
            (0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]

    def test_sorted_by_descending_score(self):
        points = precision_recall_curve([0.2, 0.9], [False, True], 1)
        assert [p.score for p in points] == [0.9, 0.2]
        assert points[0].precision == 1.0

    def test_no_gt_raises(self):
        with pytest.raises(UndefinedRecall):
            precision_recall_curve([0.5], [False], 0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            precision_recall_curve([0.5], [True, False], 1)


class TestAveragePrecision:
    def test_perfect_detector(self):
        curve = precision_recall_curve([0.9, 0.8], [True, True], 2)
        assert average_precision(curve, 2) == pytest.approx(1.0)

    def test_all_false_positives(self):
        curve = precision_recall_curve([0.9, 0.8, 0.7], [False] * 3, 2)
        assert average_precision(curve, 2) == 0.0

    def test_tp_fp_tp_hand_value(self):
        # envelope: precision 1 up to recall 0.5, then 2/3 up to recall 1
        # AP = 0.5 * 1 + 0.5 * 2/3 = 5/6
        curve = precision_recall_curve([0.9, 0.8, 0.7], [True, False, True], 2)
        assert average_precision(curve, 2) == pytest.approx(5.0 / 6.0)

    def test_empty_curve_is_zero(self):
        assert average_precision([], 3) == 0.0

    def test_no_gt_raises(self):
        with pytest.raises(UndefinedRecall):
            average_precision([], 0)

    def test_missed_gt_caps_ap(self):
        # one of two gts never found: recall stops at 0.5
        curve = precision_recall_curve([0.9], [True], 2)
        assert average_precision(curve, 2) == pytest.approx(0.5)

    def test_matches_reference_on_random_runs(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            num_gt = int(rng.integers(1, 8))
            scores = rng.uniform(0, 1, n).tolist()
            max_tp = min(n, num_gt)
            flags = [bool(rng.random() < 0.5) for _ in range(n)]
            while sum(flags) > max_tp:  # cannot have more TPs than gts
                flags[flags.index(True)] = False
            curve = precision_recall_curve(scores, flags, num_gt)
            got = average_precision(curve, num_gt)
            expected = voc_ap_reference(list(zip(scores, flags)), num_gt)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_envelope_ignores_later_dips(self):
        # a trailing FP cannot reduce AP below the prefix value
        base = precision_recall_curve([0.9, 0.8], [True, True], 2)
        with_tail = precision_recall_curve([0.9, 0.8, 0.1], [True, True, False], 2)
        assert average_precision(with_tail, 2) == \
            pytest.approx(average_precision(base, 2))


class TestMeanAP:
    def test_two_class_mean(self):
        assert mean_ap({0: 0.9269, 1: 0.8738}) == pytest.approx(0.90035)

    def test_empty_raises(self):
        with pytest.raises(NoClasses):
            mean_ap({})


class TestEvaluate:
    def test_pools_across_images(self):
        dets = {
            "a": [det(10, 10, 0.9), det(30, 30, 0.8)],   # TP, FP
            "b": [det(10, 10, 0.7)],                     # TP
        }
        gts = {
            "a": [square(10, 10)],
            "b": [square(10, 10), square(50, 50)],
        }
        report = evaluate(dets, gts, 0.5)
        ce = report.per_class[0]
        assert ce.num_gt == 3
        assert ce.num_det == 3
        # ranked flags: [T, F, T] over 3 gts
        expected = voc_ap_reference([(0.9, True), (0.8, False), (0.7, True)], 3)
        assert ce.ap == pytest.approx(expected)
        assert report.mean_ap == pytest.approx(expected)

    def test_gt_in_one_image_cannot_match_detection_in_another(self):
        dets = {"a": [det(10, 10, 0.9)]}
        gts = {"a": [], "b": [square(10, 10)]}
        report = evaluate(dets, gts, 0.5)
        assert report.per_class[0].ap == 0.0

    def test_classes_without_gt_are_excluded(self):
        dets = {"a": [det(10, 10, 0.9, class_id=0),
                      det(20, 20, 0.8, class_id=1)]}
        gts = {"a": [square(10, 10, class_id=0)]}
        report = evaluate(dets, gts, 0.5)
        assert set(report.per_class) == {0}
        assert report.mean_ap == pytest.approx(1.0)

    def test_multi_class_mean(self):
        dets = {"a": [det(10, 10, 0.9, class_id=0),
                      det(40, 40, 0.8, class_id=1),
                      det(20, 20, 0.7, class_id=1)]}  # second class1 det is FP
        gts = {"a": [square(10, 10, class_id=0), square(40, 40, class_id=1)]}
        report = evaluate(dets, gts, 0.5)
        assert report.per_class[0].ap == pytest.approx(1.0)
        assert report.per_class[1].ap == pytest.approx(1.0)
        assert report.mean_ap == pytest.approx(1.0)

    def test_iou_threshold_changes_outcome(self):
        # det offset so IoU is 1/3: TP at 0.25, FP at 0.5
        dets = {"a": [det(12, 10, 0.9)]}
        gts = {"a": [square(10, 10)]}
        assert evaluate(dets, gts, 0.25).mean_ap == pytest.approx(1.0)
        assert evaluate(dets, gts, 0.5).mean_ap == 0.0

    def test_no_gt_anywhere_raises(self):
        with pytest.raises(NoClasses):
            evaluate({"a": [det(1, 1, 0.5)]}, {"a": []}, 0.5)

    def test_curve_attached_to_report(self):
        report = evaluate({"a": [det(10, 10, 0.9)]}, {"a": [square(10, 10)]}, 0.5)
        assert report.per_class[0].curve == [PRPoint(1.0, 1.0, 0.9)]
