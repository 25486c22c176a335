"""Evaluation tests: confusion arithmetic, PR-curve properties, invariance."""

import numpy as np
import pytest

from detkit.losses import BBox
from detkit.metrics import EvalSummary, PRCurve, evaluate, pr_curve_csv
from detkit.postprocess import Detection
from detkit.tensor import ConfigError


def det(x1, y1, x2, y2, score, cls=0):
    return Detection(BBox(x1, y1, x2, y2), score, cls)


def gt(x1, y1, x2, y2, cls=0):
    return (BBox(x1, y1, x2, y2), cls)


class TestEvaluate:
    def test_perfect_predictions(self):
        gts = [[gt(0, 0, 10, 10), gt(20, 20, 30, 30, cls=1)], [gt(5, 5, 15, 15, cls=2)]]
        dets = [
            [det(0, 0, 10, 10, 0.9), det(20, 20, 30, 30, 0.8, cls=1)],
            [det(5, 5, 15, 15, 0.7, cls=2)],
        ]
        summary, curve, per_class = evaluate(dets, gts)
        assert summary.precision == 1.0
        assert summary.recall == 1.0
        assert summary.f1 == 1.0
        assert summary.ap == pytest.approx(1.0)
        assert all(v == pytest.approx(1.0) for v in per_class.values())

    def test_zero_predictions_defines_precision_zero(self):
        gts = [[gt(0, 0, 10, 10)]]
        summary, curve, _ = evaluate([[]], gts)
        assert summary.precision == 0.0
        assert summary.recall == 0.0
        assert summary.f1 == 0.0
        assert summary.ap == 0.0

    def test_hand_confusion_matrix(self):
        # 3 gt; detections: 2 TP, 1 FP -> P = 2/3, R = 2/3, F1 = 2/3
        gts = [[gt(0, 0, 10, 10), gt(20, 0, 30, 10), gt(40, 0, 50, 10)]]
        dets = [[
            det(0, 0, 10, 10, 0.9),
            det(20, 0, 30, 10, 0.8),
            det(70, 70, 80, 80, 0.7),
        ]]
        summary, _, _ = evaluate(dets, gts)
        assert summary.precision == pytest.approx(2 / 3)
        assert summary.recall == pytest.approx(2 / 3)
        assert summary.f1 == pytest.approx(2 / 3)

    def test_class_must_match(self):
        gts = [[gt(0, 0, 10, 10, cls=1)]]
        dets = [[det(0, 0, 10, 10, 0.9, cls=0)]]
        summary, _, _ = evaluate(dets, gts)
        assert summary.precision == 0.0
        assert summary.recall == 0.0

    def test_each_gt_matched_at_most_once(self):
        gts = [[gt(0, 0, 10, 10)]]
        dets = [[det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)]]
        summary, _, _ = evaluate(dets, gts)
        assert summary.precision == pytest.approx(0.5)
        assert summary.recall == 1.0

    def test_iou_threshold_gates_match(self):
        gts = [[gt(0, 0, 10, 10)]]
        dets = [[det(0, 0, 10, 5.4, 0.9)]]  # IoU 0.54
        s_lo, _, _ = evaluate(dets, gts, iou_thr=0.5)
        s_hi, _, _ = evaluate(dets, gts, iou_thr=0.6)
        assert s_lo.recall == 1.0
        assert s_hi.recall == 0.0

    def test_permutation_invariant_over_images(self):
        rng = np.random.default_rng(51)
        gts, dets = [], []
        for _ in range(6):
            img_gts, img_dets = [], []
            for _ in range(int(rng.integers(1, 4))):
                x, y = rng.uniform(0, 40, size=2)
                img_gts.append(gt(x, y, x + 10, y + 10, cls=int(rng.integers(3))))
                if rng.random() < 0.8:
                    dx, dy = rng.uniform(-2, 2, size=2)
                    img_dets.append(det(x + dx, y + dy, x + dx + 10, y + dy + 10,
                                        float(rng.uniform(0.3, 1.0)), img_gts[-1][1]))
            gts.append(img_gts)
            dets.append(img_dets)
        base, base_curve, base_pc = evaluate(dets, gts)
        perm = list(rng.permutation(len(gts)))
        shuf, shuf_curve, shuf_pc = evaluate([dets[i] for i in perm], [gts[i] for i in perm])
        assert base == shuf
        assert base_curve == shuf_curve
        assert base_pc == shuf_pc

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ConfigError):
            evaluate([[]], [[], []])


class TestPRCurve:
    def test_recall_non_decreasing_and_ap_bounded(self):
        rng = np.random.default_rng(52)
        gts, dets = [], []
        for _ in range(8):
            img_gts, img_dets = [], []
            for _ in range(int(rng.integers(1, 5))):
                x, y = rng.uniform(0, 40, size=2)
                img_gts.append(gt(x, y, x + 8, y + 8))
            for _ in range(int(rng.integers(0, 6))):
                x, y = rng.uniform(0, 40, size=2)
                img_dets.append(det(x, y, x + 8, y + 8, float(rng.uniform(0, 1))))
            gts.append(img_gts)
            dets.append(img_dets)
        _, curve, _ = evaluate(dets, gts)
        assert all(b >= a for a, b in zip(curve.recalls, curve.recalls[1:]))
        assert 0.0 <= curve.ap <= 1.0
        assert all(0.0 <= p <= 1.0 for p in curve.precisions)

    def test_known_curve_area(self):
        # one image, two gt, dets: TP at 0.9, FP at 0.8, TP at 0.7
        gts = [[gt(0, 0, 10, 10), gt(20, 0, 30, 10)]]
        dets = [[
            det(0, 0, 10, 10, 0.9),
            det(50, 50, 60, 60, 0.8),
            det(20, 0, 30, 10, 0.7),
        ]]
        _, curve, _ = evaluate(dets, gts)
        # points: (0.5, 1), (0.5, 0.5), (1.0, 2/3); all-points AP:
        # 0.5 * 1 + 0.5 * 2/3
        assert curve.ap == pytest.approx(0.5 + 0.5 * 2 / 3)

    def test_validation_rejects_decreasing_recall(self):
        with pytest.raises(ConfigError):
            PRCurve((0.5, 0.4), (1.0, 1.0), 0.5)

    def test_csv_emission(self):
        _, curve, _ = evaluate([[det(0, 0, 10, 10, 0.9)]], [[gt(0, 0, 10, 10)]])
        text = pr_curve_csv(curve)
        lines = text.strip().splitlines()
        assert lines[0] == "recall,precision"
        assert len(lines) == 2


class TestEvalSummary:
    def test_f1_identity_enforced(self):
        s = EvalSummary.build(precision=0.8, recall=0.4, ap=0.5)
        assert s.f1 == pytest.approx(2 * 0.8 * 0.4 / 1.2)

    def test_f1_zero_when_both_zero(self):
        s = EvalSummary.build(precision=0.0, recall=0.0, ap=0.0)
        assert s.f1 == 0.0

    def test_six_indicators_serialized(self):
        s = EvalSummary.build(0.9, 0.8, 0.85, model_size_mb=1.5, computation_macs=12345)
        d = s.to_json_dict()
        assert set(d) == {"precision", "recall", "f1", "ap", "model_size_mb",
                          "computation_macs"}
