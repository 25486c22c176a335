"""A small fixed single-scale detector that exercises every operator.

Topology: patchify stem (kernel = stride = overall stride, so the whole net
runs on one grid), two partial-convolution residual blocks, pyramid max
pooling, one CBAM attention block, then a pointwise prediction head emitting
[tx, ty, tw, th, objectness, class logits] per cell.

The same description drives three things: parameter initialization, the
forward/backward execution, and the cost-model layer list, so reports,
weight manifests and the executed network cannot drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import (
    CBAMParams,
    CBAMSpec,
    FasterNetBlockParams,
    FasterNetBlockSpec,
    PConvSpec,
    cbam_backward,
    cbam_forward,
    fasternet_block_backward,
    fasternet_block_forward,
)
from .ops import ConvSpec, activation, activation_backward, conv2d_backward, conv2d_forward, spp, spp_backward
from .postprocess import GridDecodeSpec
from .tensor import ConfigError, Tensor


@dataclass(frozen=True)
class ToyNetSpec:
    image_size: int = 64
    in_channels: int = 1
    stem_channels: int = 40
    num_classes: int = 3
    stride: int = 8
    cp_fraction: float = 0.25
    pconv_kernel: int = 3
    expansion: float = 2.0
    spp_windows: tuple[int, ...] = (3, 5)
    cbam_reduction: int = 4
    cbam_spatial_kernel: int = 1
    cbam_composition: str = "sequential"
    cbam_channel_mlp: str = "prose"
    activation: str = "mish"
    use_pconv: bool = True

    def __post_init__(self):
        if self.image_size % self.stride != 0:
            raise ConfigError("image size must be a multiple of the stride")
        if not 0.0 < self.cp_fraction <= 1.0:
            raise ConfigError("cp_fraction must be in (0, 1]")
        if self.stem_channels < 4:
            raise ConfigError("stem must have at least 4 channels")

    @property
    def grid(self) -> int:
        return self.image_size // self.stride

    @property
    def conv_channels(self) -> int:
        return max(1, round(self.cp_fraction * self.stem_channels))

    @property
    def neck_channels(self) -> int:
        return self.stem_channels * (1 + len(self.spp_windows))

    @property
    def head_channels(self) -> int:
        return 5 + self.num_classes

    def stem_spec(self) -> ConvSpec:
        return ConvSpec(self.in_channels, self.stem_channels, kernel=self.stride,
                        stride=self.stride, padding=0)

    def block_spec(self) -> FasterNetBlockSpec:
        return FasterNetBlockSpec(
            channels=self.stem_channels,
            pconv=PConvSpec(self.stem_channels, self.conv_channels, self.pconv_kernel),
            expansion=self.expansion,
            activation=self.activation,
        )

    def cbam_spec(self) -> CBAMSpec:
        return CBAMSpec(
            channels=self.neck_channels,
            reduction=self.cbam_reduction,
            spatial_kernel=self.cbam_spatial_kernel,
            composition=self.cbam_composition,
            channel_mlp=self.cbam_channel_mlp,
        )

    def head_spec(self) -> ConvSpec:
        return ConvSpec(self.neck_channels, self.head_channels, kernel=1)

    def decode_spec(self, score_threshold: float = 0.25) -> GridDecodeSpec:
        return GridDecodeSpec(self.grid, self.grid, float(self.stride),
                              self.num_classes, score_threshold)


BACKBONE_PREFIXES = ("stem", "block1", "block2")


def backbone_param_names(params: dict[str, np.ndarray]) -> set[str]:
    return {k for k in params if k.split(".", 1)[0] in BACKBONE_PREFIXES}


def init_params(spec: ToyNetSpec, rng: np.random.Generator, dtype=np.float64) -> dict[str, np.ndarray]:
    """Fresh parameter store. Head biases start with small objectness prior
    (sigmoid(-2)) and a size prior of 2.5 cells so early boxes are plausible."""
    params: dict[str, np.ndarray] = {}

    def he(shape, fan_in):
        return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)

    st = spec.stem_spec()
    params["stem.w"] = he((st.out_channels, st.in_channels, st.kernel, st.kernel),
                          st.in_channels * st.kernel**2)
    params["stem.b"] = np.zeros(st.out_channels, dtype=dtype)

    bspec = spec.block_spec()
    for name in ("block1", "block2"):
        bp = FasterNetBlockParams.init(bspec, rng, dtype)
        params[f"{name}.pconv.w"] = bp.pconv_w.data
        params[f"{name}.pw1.w"] = bp.pw1_w.data
        params[f"{name}.pw1.b"] = bp.pw1_b
        params[f"{name}.pw2.w"] = bp.pw2_w.data
        params[f"{name}.pw2.b"] = bp.pw2_b

    cp = CBAMParams.init(spec.cbam_spec(), rng, dtype)
    params["cbam.fc1.w"] = cp.w1
    params["cbam.fc1.b"] = cp.b1
    params["cbam.fc2.w"] = cp.w2
    params["cbam.fc2.b"] = cp.b2
    params["cbam.spatial.w"] = cp.spatial_w.data
    params["cbam.spatial.b"] = cp.spatial_b

    hd = spec.head_spec()
    params["head.w"] = he((hd.out_channels, hd.in_channels, 1, 1), hd.in_channels) * 0.1
    head_b = np.zeros(hd.out_channels, dtype=dtype)
    head_b[2] = head_b[3] = math.log(2.5)
    head_b[4] = -2.0
    params["head.b"] = head_b
    return params


def _block_params(params: dict[str, np.ndarray], name: str) -> FasterNetBlockParams:
    return FasterNetBlockParams(
        pconv_w=Tensor(params[f"{name}.pconv.w"]),
        pw1_w=Tensor(params[f"{name}.pw1.w"]),
        pw1_b=params[f"{name}.pw1.b"],
        pw2_w=Tensor(params[f"{name}.pw2.w"]),
        pw2_b=params[f"{name}.pw2.b"],
    )


def _cbam_params(params: dict[str, np.ndarray]) -> CBAMParams:
    return CBAMParams(
        w1=params["cbam.fc1.w"],
        b1=params["cbam.fc1.b"],
        w2=params["cbam.fc2.w"],
        b2=params["cbam.fc2.b"],
        spatial_w=Tensor(params["cbam.spatial.w"]),
        spatial_b=params["cbam.spatial.b"],
    )


def net_forward(params: dict[str, np.ndarray], spec: ToyNetSpec, x: Tensor):
    """Run the detector; returns (head tensor (n, 5+K, g, g), cache for backward)."""
    if x.c != spec.in_channels or x.h != spec.image_size or x.w != spec.image_size:
        raise ConfigError(
            f"input shape {x.shape} does not match ({spec.in_channels}, "
            f"{spec.image_size}, {spec.image_size})"
        )
    stem_z = conv2d_forward(x, Tensor(params["stem.w"]), params["stem.b"], spec.stem_spec())
    stem_a = activation(stem_z, spec.activation)
    b1 = fasternet_block_forward(stem_a, _block_params(params, "block1"), spec.block_spec())
    b2 = fasternet_block_forward(b1, _block_params(params, "block2"), spec.block_spec())
    neck = spp(b2, spec.spp_windows)
    att = cbam_forward(neck, _cbam_params(params), spec.cbam_spec())
    head = conv2d_forward(att, Tensor(params["head.w"]), params["head.b"], spec.head_spec())
    cache = (x, stem_z, stem_a, b1, b2, neck, att)
    return head, cache


def net_backward(params: dict[str, np.ndarray], spec: ToyNetSpec, cache, upstream: Tensor):
    """Gradients of <upstream, head> for every parameter, keyed like params."""
    x, stem_z, stem_a, b1, b2, neck, att = cache
    grads: dict[str, np.ndarray] = {}

    g_att, g_headw, g_headb = conv2d_backward(att, Tensor(params["head.w"]), spec.head_spec(), upstream)
    grads["head.w"] = g_headw.data
    grads["head.b"] = g_headb

    g_neck, g_cbam = cbam_backward(neck, _cbam_params(params), spec.cbam_spec(), g_att)
    grads["cbam.fc1.w"] = g_cbam.w1
    grads["cbam.fc1.b"] = g_cbam.b1
    grads["cbam.fc2.w"] = g_cbam.w2
    grads["cbam.fc2.b"] = g_cbam.b2
    grads["cbam.spatial.w"] = g_cbam.spatial_w.data
    grads["cbam.spatial.b"] = g_cbam.spatial_b

    g_b2 = spp_backward(b2, spec.spp_windows, g_neck)
    g_b1, gp2 = fasternet_block_backward(b1, _block_params(params, "block2"), spec.block_spec(), g_b2)
    g_stem_a, gp1 = fasternet_block_backward(stem_a, _block_params(params, "block1"), spec.block_spec(), g_b1)
    for name, gp in (("block1", gp1), ("block2", gp2)):
        grads[f"{name}.pconv.w"] = gp.pconv_w.data
        grads[f"{name}.pw1.w"] = gp.pw1_w.data
        grads[f"{name}.pw1.b"] = gp.pw1_b
        grads[f"{name}.pw2.w"] = gp.pw2_w.data
        grads[f"{name}.pw2.b"] = gp.pw2_b

    g_stem_z = activation_backward(stem_z, spec.activation, g_stem_a)
    _, g_stemw, g_stemb = conv2d_backward(x, Tensor(params["stem.w"]), spec.stem_spec(), g_stem_z)
    grads["stem.w"] = g_stemw.data
    grads["stem.b"] = g_stemb
    return grads


def cost_layers(spec: ToyNetSpec) -> list[dict]:
    """Layer descriptors for the cost model; mirrors the executed network."""
    g = spec.grid
    c = spec.stem_channels
    layers: list[dict] = [
        {
            "kind": "conv", "name": "stem",
            "h": spec.image_size, "w": spec.image_size,
            "c_in": spec.in_channels, "c_out": c,
            "k": spec.stride, "stride": spec.stride, "padding": 0,
        }
    ]
    bspec = spec.block_spec()
    for name in ("block1", "block2"):
        if spec.use_pconv:
            layers.append({
                "kind": "pconv", "name": f"{name}.pconv",
                "h": g, "w": g, "c": c, "c_p": spec.conv_channels, "k": spec.pconv_kernel,
            })
        else:
            layers.append({
                "kind": "conv", "name": f"{name}.conv",
                "h": g, "w": g, "c_in": c, "c_out": c, "k": spec.pconv_kernel,
            })
        layers.append({"kind": "conv", "name": f"{name}.pw1",
                       "h": g, "w": g, "c_in": c, "c_out": bspec.hidden, "k": 1})
        layers.append({"kind": "conv", "name": f"{name}.pw2",
                       "h": g, "w": g, "c_in": bspec.hidden, "c_out": c, "k": 1})
    layers.append({"kind": "spp", "name": "spp", "h": g, "w": g, "c": c,
                   "num_windows": len(spec.spp_windows)})
    cb = spec.cbam_spec()
    d1 = cb.channels if cb.channel_mlp == "literal" else cb.hidden
    layers.append({"kind": "linear", "name": "cbam.fc1",
                   "in_features": cb.channels, "out_features": d1})
    layers.append({"kind": "linear", "name": "cbam.fc2",
                   "in_features": d1 if cb.channel_mlp == "prose" else cb.channels,
                   "out_features": cb.channels})
    layers.append({"kind": "conv", "name": "cbam.spatial",
                   "h": g, "w": g, "c_in": 2, "c_out": 1, "k": cb.spatial_kernel})
    layers.append({"kind": "conv", "name": "head",
                   "h": g, "w": g, "c_in": spec.neck_channels,
                   "c_out": spec.head_channels, "k": 1})
    return layers
