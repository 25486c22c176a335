"""Decode round trips, NMS against a brute-force reference, letterbox."""

import numpy as np
import pytest
from oracles import brute_force_nms, random_detections

from detkit.losses import BBox, iou
from detkit.postprocess import (
    Detection,
    GridDecodeSpec,
    box_from_letterboxed,
    box_to_letterboxed,
    decode,
    detections_from_json,
    detections_to_json,
    encode_box,
    letterbox,
    nms,
)
from detkit.tensor import ConfigError, Tensor


def head_with_one_cell(spec, row, col, tx, ty, tw, th, obj=40.0, cls_id=0, cls_logit=40.0):
    head = np.zeros((1, spec.channels, spec.grid_h, spec.grid_w))
    head[0, 4] = -40.0
    head[0, 0, row, col] = tx
    head[0, 1, row, col] = ty
    head[0, 2, row, col] = tw
    head[0, 3, row, col] = th
    head[0, 4, row, col] = obj
    head[0, 5 + cls_id, row, col] = cls_logit
    return Tensor(head)


class TestDecode:
    def test_zero_offsets_put_center_at_cell_center(self):
        spec = GridDecodeSpec(4, 4, 8.0, 1, score_threshold=0.25)
        head = head_with_one_cell(spec, row=2, col=1, tx=0.0, ty=0.0, tw=0.0, th=0.0)
        (det,) = decode(head, spec)
        assert det.bbox.center == (pytest.approx(12.0), pytest.approx(20.0))

    def test_zero_size_logits_give_stride_sized_box(self):
        spec = GridDecodeSpec(4, 4, 8.0, 1)
        head = head_with_one_cell(spec, 1, 1, 0.0, 0.0, 0.0, 0.0)
        (det,) = decode(head, spec)
        assert det.bbox.width == pytest.approx(8.0)
        assert det.bbox.height == pytest.approx(8.0)

    def test_score_threshold_gates_emission(self):
        spec = GridDecodeSpec(2, 2, 8.0, 1, score_threshold=0.25)
        head = Tensor.zeros((1, 6, 2, 2))  # score sigmoid(0)^2 = 0.25 everywhere
        assert len(decode(head, spec)) == 4
        spec_hi = GridDecodeSpec(2, 2, 8.0, 1, score_threshold=0.2500001)
        assert decode(head, spec_hi) == []

    def test_boxes_clamped_to_image(self):
        spec = GridDecodeSpec(2, 2, 8.0, 1)
        head = head_with_one_cell(spec, 0, 0, 0.0, 0.0, 3.0, 3.0)  # huge box
        (det,) = decode(head, spec)
        assert det.bbox.x1 >= 0.0 and det.bbox.y1 >= 0.0
        assert det.bbox.x2 <= spec.image_w and det.bbox.y2 <= spec.image_h

    def test_channel_mismatch_rejected(self):
        spec = GridDecodeSpec(2, 2, 8.0, 3)
        with pytest.raises(ConfigError):
            decode(Tensor.zeros((1, 6, 2, 2)), spec)

    def test_encode_decode_round_trip(self):
        spec = GridDecodeSpec(8, 8, 8.0, 2)
        rng = np.random.default_rng(31)
        for _ in range(60):
            w = rng.uniform(3.0, 40.0)
            h = rng.uniform(3.0, 40.0)
            cx = rng.uniform(w / 2 + 0.2, spec.image_w - w / 2 - 0.2)
            cy = rng.uniform(h / 2 + 0.2, spec.image_h - h / 2 - 0.2)
            box = BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            row, col, tx, ty, tw, th = encode_box(box, spec)
            head = head_with_one_cell(spec, row, col, tx, ty, tw, th, cls_id=1)
            (det,) = decode(head, spec)
            assert det.class_id == 1
            for got, want in zip(
                (det.bbox.x1, det.bbox.y1, det.bbox.x2, det.bbox.y2),
                (box.x1, box.y1, box.x2, box.y2),
            ):
                assert abs(got - want) < 1e-6


class TestNMS:
    def test_single_detection_kept(self):
        d = Detection(BBox(0, 0, 2, 2), 0.8, 0)
        assert nms([d]) == [d]

    def test_identical_boxes_keep_higher_score(self):
        a = Detection(BBox(0, 0, 2, 2), 0.9, 0)
        b = Detection(BBox(0, 0, 2, 2), 0.8, 0)
        assert nms([b, a]) == [a]

    def test_different_classes_do_not_suppress(self):
        a = Detection(BBox(0, 0, 2, 2), 0.9, 0)
        b = Detection(BBox(0, 0, 2, 2), 0.8, 1)
        assert nms([a, b]) == [a, b]

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(200):
            dets = random_detections(rng, int(rng.integers(0, 31)))
            got = nms(dets, 0.45)
            want = brute_force_nms(dets, 0.45)
            assert {id(d) for d in got} == {id(d) for d in want}
            assert got == want  # includes ordering

    def test_output_is_subset_with_no_close_pairs(self):
        rng = np.random.default_rng(33)
        dets = random_detections(rng, 25)
        out = nms(dets, 0.45)
        assert all(d in dets for d in out)
        for i, a in enumerate(out):
            for b in out[i + 1:]:
                if a.class_id == b.class_id:
                    assert iou(a.bbox, b.bbox) <= 0.45
        scores = [d.score for d in out]
        assert scores == sorted(scores, reverse=True)

    def test_idempotent(self):
        rng = np.random.default_rng(34)
        for _ in range(20):
            dets = random_detections(rng, 20)
            once = nms(dets, 0.45)
            assert nms(once, 0.45) == once


class TestLetterbox:
    def test_already_target_sized_is_identity(self):
        rng = np.random.default_rng(35)
        img = Tensor(rng.uniform(0, 1, size=(1, 1, 16, 16)))
        out, scale, pads = letterbox(img, 16, 16)
        assert scale == 1.0 and pads == (0, 0)
        assert np.array_equal(out.data, img.data)

    def test_wide_image_pads_split_equally(self):
        img = Tensor.full((1, 1, 8, 16), 1.0)
        out, scale, (px, py) = letterbox(img, 16, 16)
        assert scale == 1.0
        assert (px, py) == (0, 4)
        assert np.allclose(out.data[:, :, 4:12, :], 1.0)
        assert np.allclose(out.data[:, :, :4, :], 0.5)
        assert np.allclose(out.data[:, :, 12:, :], 0.5)

    def test_box_round_trip_within_a_pixel(self):
        rng = np.random.default_rng(36)
        img = Tensor(rng.uniform(0, 1, size=(1, 1, 30, 50)))
        _, scale, pads = letterbox(img, 32, 32)
        for _ in range(20):
            x1, y1 = rng.uniform(0, 20, size=2)
            box = BBox(x1, y1, x1 + rng.uniform(1, 25), y1 + rng.uniform(1, 9))
            fwd = box_to_letterboxed(box, scale, pads)
            back = box_from_letterboxed(fwd, scale, pads)
            for got, want in zip((back.x1, back.y1, back.x2, back.y2),
                                 (box.x1, box.y1, box.x2, box.y2)):
                assert abs(got - want) <= 1.0

    def test_empty_target_rejected(self):
        with pytest.raises(ConfigError):
            letterbox(Tensor.zeros((1, 1, 4, 4)), 0, 4)


class TestDetectionJson:
    def test_round_trip(self):
        dets = [
            Detection(BBox(1.0, 2.0, 3.5, 4.25), 0.75, 2),
            Detection(BBox(0.0, 0.0, 1.0, 1.0), 0.5, 0),
        ]
        back = detections_from_json(detections_to_json(dets))
        assert back == dets

    def test_schema_fields(self):
        import json

        text = detections_to_json([Detection(BBox(1, 2, 3, 4), 0.5, 1)])
        rows = json.loads(text)
        assert rows == [{"bbox": [1.0, 2.0, 3.0, 4.0], "score": 0.5, "class": 1}]
