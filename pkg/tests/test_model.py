"""Whole-network assembly: shapes, directional gradients, freezing support."""

import numpy as np
import pytest

from detkit.losses import BBox, detection_loss, detection_loss_grad
from detkit.model import (
    ToyNetSpec,
    backbone_param_names,
    cost_layers,
    init_params,
    net_backward,
    net_forward,
)
from detkit.tensor import ConfigError, Tensor


def tiny_spec():
    return ToyNetSpec(image_size=16, stem_channels=8, num_classes=2)


class TestForward:
    def test_head_shape(self):
        spec = tiny_spec()
        params = init_params(spec, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).uniform(0, 1, size=(3, 1, 16, 16)))
        head, _ = net_forward(params, spec, x)
        assert head.shape == (3, 5 + 2, 2, 2)

    def test_input_shape_validated(self):
        spec = tiny_spec()
        params = init_params(spec, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            net_forward(params, spec, Tensor.zeros((1, 1, 8, 8)))

    def test_deterministic_init(self):
        spec = tiny_spec()
        a = init_params(spec, np.random.default_rng(5))
        b = init_params(spec, np.random.default_rng(5))
        assert list(a) == list(b)
        for k in a:
            assert np.array_equal(a[k], b[k])


class TestBackward:
    def test_directional_derivative_matches_finite_difference(self):
        """<grad, d> vs central difference of the end-to-end loss along 20
        random parameter directions."""
        spec = tiny_spec()
        rng = np.random.default_rng(2)
        params = init_params(spec, rng)
        x = Tensor(rng.uniform(0, 1, size=(1, 1, 16, 16)))
        targets = [(BBox(3.0, 3.0, 11.0, 12.0), 1)]

        def loss_of(p):
            head, _ = net_forward(p, spec, x)
            return detection_loss(head, targets, "ciou", float(spec.stride)).total

        head, cache = net_forward(params, spec, x)
        upstream = detection_loss_grad(head, targets, "ciou", float(spec.stride))
        grads = net_backward(params, spec, cache, upstream)
        assert set(grads) == set(params)

        h = 1e-6
        for trial in range(20):
            direction = {k: rng.standard_normal(v.shape) for k, v in params.items()}
            analytic = sum(float((grads[k] * direction[k]).sum()) for k in params)
            plus = {k: params[k] + h * direction[k] for k in params}
            minus = {k: params[k] - h * direction[k] for k in params}
            numeric = (loss_of(plus) - loss_of(minus)) / (2 * h)
            denom = max(abs(analytic), abs(numeric), 1e-4)
            assert abs(analytic - numeric) / denom < 1e-4, f"direction {trial}"

    def test_gradients_cover_all_param_shapes(self):
        spec = tiny_spec()
        rng = np.random.default_rng(3)
        params = init_params(spec, rng)
        head, cache = net_forward(params, spec, Tensor(rng.uniform(0, 1, (2, 1, 16, 16))))
        grads = net_backward(params, spec, cache, Tensor(rng.standard_normal(head.shape)))
        for k, v in params.items():
            assert grads[k].shape == v.shape


class TestStructure:
    def test_backbone_names(self):
        spec = tiny_spec()
        params = init_params(spec, np.random.default_rng(4))
        frozen = backbone_param_names(params)
        assert "stem.w" in frozen and "block2.pw1.w" in frozen
        assert "head.w" not in frozen and "cbam.fc1.w" not in frozen

    def test_cost_layers_mirror_params(self):
        spec = tiny_spec()
        params = init_params(spec, np.random.default_rng(5))
        layer_names = {l["name"] for l in cost_layers(spec)}
        param_prefixes = {k.rsplit(".", 1)[0] for k in params}
        assert param_prefixes <= layer_names
