"""Synthetic dataset contracts: determinism, bounds, mask-tight boxes."""

import numpy as np

from detkit.dataset import synth_dataset


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        a = synth_dataset(7, 10, 64, 3)
        b = synth_dataset(7, 10, 64, 3)
        for (img_a, t_a), (img_b, t_b) in zip(a, b):
            assert img_a.data.tobytes() == img_b.data.tobytes()
            assert t_a == t_b

    def test_different_seeds_differ(self):
        a = synth_dataset(1, 4, 64, 3)
        b = synth_dataset(2, 4, 64, 3)
        assert any(x.data.tobytes() != y.data.tobytes() for (x, _), (y, _) in zip(a, b))


class TestAnnotations:
    def test_boxes_inside_bounds_with_positive_area(self):
        for img, targets in synth_dataset(11, 30, 64, 3):
            assert 1 <= len(targets) <= 4
            for box, cls in targets:
                assert 0 <= cls < 3
                assert box.area > 0
                assert 0.0 <= box.x1 < box.x2 <= 64.0
                assert 0.0 <= box.y1 < box.y2 <= 64.0

    def test_mask_tight_boxes_within_one_pixel(self):
        """Rasterize-and-scan oracle: threshold the (bright shape on dim
        noise) image inside each annotation's neighborhood and compare the
        pixel-tight box against the annotation."""
        for img, targets in synth_dataset(13, 20, 64, 3):
            plane = img.data[0, 0]
            for box, cls in targets:
                x1 = max(int(np.floor(box.x1)) - 1, 0)
                y1 = max(int(np.floor(box.y1)) - 1, 0)
                x2 = min(int(np.ceil(box.x2)) + 1, 64)
                y2 = min(int(np.ceil(box.y2)) + 1, 64)
                crop = plane[y1:y2, x1:x2]
                ys, xs = np.nonzero(crop > 0.55)
                assert len(ys) > 0, "annotation region contains no shape pixels"
                # pixel (i, j) covers [j, j+1) x [i, i+1)
                tight = (x1 + xs.min(), y1 + ys.min(), x1 + xs.max() + 1, y1 + ys.max() + 1)
                for got, want in zip(tight, (box.x1, box.y1, box.x2, box.y2)):
                    assert abs(got - want) <= 1.0

    def test_images_normalized(self):
        for img, _ in synth_dataset(17, 5, 64, 3):
            assert img.shape == (1, 1, 64, 64)
            assert img.data.min() >= 0.0
            assert img.data.max() <= 1.0
