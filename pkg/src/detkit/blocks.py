"""Partial convolution, the residual block built on it, and CBAM attention.

Partial convolution runs a regular convolution over the first ``conv_channels``
input channels and passes the remaining channels through untouched, which is
where its memory-traffic savings come from (see :mod:`detkit.cost`).

CBAM composes a channel gate (per-channel weights from globally pooled
statistics pushed through a two-layer MLP) with a spatial gate (per-position
weights from channel-wise max/mean maps pushed through a small convolution).
Two selectable formulations exist for each half and all four are implemented:

* ``channel_mlp="prose"``: the bottleneck MLP, sigma(W2 relu(W1 g + b1) + b2).
* ``channel_mlp="literal"``: both branches consume the pooled vector with
  square c-by-c weights and the gate re-applies them,
  sigma(W1 v1 + b1 + W2 v2 + b2) with v_i = relu(W_i g + b_i).
* ``composition="sequential"`` (default): spatial attention runs on the
  channel-gated map.
* ``composition="literal"``: both gates run on the raw input and their gated
  maps are multiplied elementwise, which squares the input contribution.

All backward passes are hand-derived and verified against central finite
differences by the gradient-check suites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ops import (
    ConvSpec,
    activation,
    activation_backward,
    conv2d_backward,
    conv2d_forward,
    relu_grad,
    sigmoid,
)
from .tensor import ConfigError, Tensor


@dataclass(frozen=True)
class PConvSpec:
    """Partial convolution: conv the first conv_channels, pass the rest through.

    Stride is 1 and padding (kernel - 1) // 2, so spatial shape is preserved.
    """

    channels: int
    conv_channels: int
    kernel: int = 3

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if not 1 <= self.conv_channels <= self.channels:
            raise ConfigError(
                f"conv_channels must be in [1, {self.channels}], got {self.conv_channels}"
            )
        if self.kernel % 2 == 0:
            raise ConfigError("partial conv kernel must be odd")

    @property
    def untouched(self) -> int:
        return self.channels - self.conv_channels

    def conv_spec(self) -> ConvSpec:
        return ConvSpec(
            in_channels=self.conv_channels,
            out_channels=self.conv_channels,
            kernel=self.kernel,
            stride=1,
            padding=(self.kernel - 1) // 2,
        )


@dataclass(frozen=True)
class CBAMSpec:
    """Attention block configuration.

    hidden width of the prose-mode MLP is max(1, channels // reduction).
    spatial_kernel must be odd; the default 1 keeps the spatial gate pointwise.
    """

    channels: int
    reduction: int = 4
    spatial_kernel: int = 1
    composition: str = "sequential"
    channel_mlp: str = "prose"

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.reduction < 1:
            raise ConfigError("reduction must be >= 1")
        if self.spatial_kernel % 2 == 0:
            raise ConfigError("spatial kernel must be odd")
        if self.composition not in ("sequential", "literal"):
            raise ConfigError(f"unknown composition {self.composition!r}")
        if self.channel_mlp not in ("prose", "literal"):
            raise ConfigError(f"unknown channel_mlp {self.channel_mlp!r}")

    @property
    def hidden(self) -> int:
        return max(1, self.channels // self.reduction)

    def spatial_conv_spec(self) -> ConvSpec:
        return ConvSpec(
            in_channels=2,
            out_channels=1,
            kernel=self.spatial_kernel,
            stride=1,
            padding=(self.spatial_kernel - 1) // 2,
        )


@dataclass(frozen=True)
class FasterNetBlockSpec:
    """Residual block: partial conv, then a two-layer pointwise conv MLP."""

    channels: int
    pconv: PConvSpec
    expansion: float = 2.0
    activation: str = "mish"

    def __post_init__(self):
        if self.pconv.channels != self.channels:
            raise ConfigError("pconv channels must match block channels")
        if self.expansion <= 0:
            raise ConfigError("expansion ratio must be > 0")

    @property
    def hidden(self) -> int:
        return math.ceil(self.expansion * self.channels)

    def pw1_spec(self) -> ConvSpec:
        return ConvSpec(self.channels, self.hidden, kernel=1)

    def pw2_spec(self) -> ConvSpec:
        return ConvSpec(self.hidden, self.channels, kernel=1)


@dataclass
class CBAMParams:
    """Learnable state for one CBAM block."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    spatial_w: Tensor
    spatial_b: np.ndarray

    @classmethod
    def init(cls, spec: CBAMSpec, rng: np.random.Generator, dtype=np.float64) -> "CBAMParams":
        c = spec.channels
        d1 = c if spec.channel_mlp == "literal" else spec.hidden
        d2 = c
        w1 = (rng.standard_normal((d1, c)) * math.sqrt(2.0 / c)).astype(dtype)
        w2 = (rng.standard_normal((d2, d1 if spec.channel_mlp == "prose" else c)) * math.sqrt(2.0 / d1)).astype(dtype)
        k = spec.spatial_kernel
        sw = (rng.standard_normal((1, 2, k, k)) * math.sqrt(2.0 / (2 * k * k))).astype(dtype)
        return cls(
            w1=w1,
            b1=np.zeros(d1, dtype=dtype),
            w2=w2,
            b2=np.zeros(d2, dtype=dtype),
            spatial_w=Tensor(sw),
            spatial_b=np.zeros(1, dtype=dtype),
        )


@dataclass
class FasterNetBlockParams:
    """Learnable state for one block: pconv kernel plus the pointwise MLP."""

    pconv_w: Tensor
    pw1_w: Tensor
    pw1_b: np.ndarray
    pw2_w: Tensor
    pw2_b: np.ndarray

    @classmethod
    def init(
        cls, spec: FasterNetBlockSpec, rng: np.random.Generator, dtype=np.float64
    ) -> "FasterNetBlockParams":
        cp, k = spec.pconv.conv_channels, spec.pconv.kernel
        c, hid = spec.channels, spec.hidden
        pw = (rng.standard_normal((cp, cp, k, k)) * math.sqrt(2.0 / (cp * k * k))).astype(dtype)
        w1 = (rng.standard_normal((hid, c, 1, 1)) * math.sqrt(2.0 / c)).astype(dtype)
        w2 = (rng.standard_normal((c, hid, 1, 1)) * math.sqrt(2.0 / hid)).astype(dtype)
        return cls(
            pconv_w=Tensor(pw),
            pw1_w=Tensor(w1),
            pw1_b=np.zeros(hid, dtype=dtype),
            pw2_w=Tensor(w2),
            pw2_b=np.zeros(c, dtype=dtype),
        )


# ---------------------------------------------------------------------------
# partial convolution
# ---------------------------------------------------------------------------

def pconv_forward(x: Tensor, weights: Tensor, spec: PConvSpec) -> Tensor:
    """Convolve channels [0, conv_channels); copy channels [conv_channels, c)
    through bit-identically. Spatial shape is preserved."""
    if x.c != spec.channels:
        raise ConfigError(f"input has {x.c} channels, spec expects {spec.channels}")
    cp = spec.conv_channels
    front = Tensor(x.data[:, :cp])
    conv_out = conv2d_forward(front, weights, None, spec.conv_spec())
    if cp == spec.channels:
        return conv_out
    return Tensor(np.concatenate([conv_out.data, x.data[:, cp:]], axis=1))


def pconv_backward(x: Tensor, weights: Tensor, spec: PConvSpec, upstream: Tensor):
    """Gradients w.r.t. input and kernel; pass-through channels carry the
    upstream gradient unchanged."""
    if upstream.shape != x.shape:
        raise ConfigError("upstream shape must match input (pconv preserves shape)")
    cp = spec.conv_channels
    front = Tensor(x.data[:, :cp])
    up_front = Tensor(upstream.data[:, :cp])
    gx_front, gw, _ = conv2d_backward(front, weights, spec.conv_spec(), up_front)
    if cp == spec.channels:
        return gx_front, gw
    grad_x = np.concatenate([gx_front.data, upstream.data[:, cp:]], axis=1)
    return Tensor(grad_x), gw


# ---------------------------------------------------------------------------
# FasterNet-style residual block
# ---------------------------------------------------------------------------

def fasternet_block_forward(x: Tensor, params: FasterNetBlockParams, spec: FasterNetBlockSpec) -> Tensor:
    """x + PW2(act(PW1(pconv(x)))) with 1x1 convs PW1: c -> hidden, PW2 back."""
    pc = pconv_forward(x, params.pconv_w, spec.pconv)
    z1 = conv2d_forward(pc, params.pw1_w, params.pw1_b, spec.pw1_spec())
    a1 = activation(z1, spec.activation)
    z2 = conv2d_forward(a1, params.pw2_w, params.pw2_b, spec.pw2_spec())
    return Tensor(x.data + z2.data)


def fasternet_block_backward(
    x: Tensor, params: FasterNetBlockParams, spec: FasterNetBlockSpec, upstream: Tensor
):
    if upstream.shape != x.shape:
        raise ConfigError("upstream shape must match input (block preserves shape)")
    pc = pconv_forward(x, params.pconv_w, spec.pconv)
    z1 = conv2d_forward(pc, params.pw1_w, params.pw1_b, spec.pw1_spec())
    a1 = activation(z1, spec.activation)

    g_a1, g_pw2w, g_pw2b = conv2d_backward(a1, params.pw2_w, spec.pw2_spec(), upstream)
    g_z1 = activation_backward(z1, spec.activation, g_a1)
    g_pc, g_pw1w, g_pw1b = conv2d_backward(pc, params.pw1_w, spec.pw1_spec(), g_z1)
    g_x_branch, g_pconvw = pconv_backward(x, params.pconv_w, spec.pconv, g_pc)

    grad_x = Tensor(upstream.data + g_x_branch.data)
    grads = FasterNetBlockParams(
        pconv_w=g_pconvw, pw1_w=g_pw1w, pw1_b=g_pw1b, pw2_w=g_pw2w, pw2_b=g_pw2b
    )
    return grad_x, grads


# ---------------------------------------------------------------------------
# channel attention
# ---------------------------------------------------------------------------

def _check_channel_dims(spec: CBAMSpec, w1, b1, w2, b2) -> None:
    c = spec.channels
    if spec.channel_mlp == "prose":
        want1, want2 = (spec.hidden, c), (c, spec.hidden)
    else:
        want1, want2 = (c, c), (c, c)
    if np.shape(w1) != want1 or np.shape(b1) != (want1[0],):
        raise ConfigError(f"first layer wants W1 {want1}, b1 ({want1[0]},)")
    if np.shape(w2) != want2 or np.shape(b2) != (want2[0],):
        raise ConfigError(f"second layer wants W2 {want2}, b2 ({want2[0]},)")


def _channel_gate(x: Tensor, w1, b1, w2, b2, spec: CBAMSpec):
    """Shared forward internals; returns (gate (n, c), intermediates)."""
    gap = x.data.mean(axis=(2, 3))
    if spec.channel_mlp == "prose":
        z1 = gap @ w1.T + b1
        v1 = np.maximum(z1, 0.0)
        z = v1 @ w2.T + b2
        cache = (gap, z1, v1, None, None)
    else:
        z1 = gap @ w1.T + b1
        z2 = gap @ w2.T + b2
        v1 = np.maximum(z1, 0.0)
        v2 = np.maximum(z2, 0.0)
        z = v1 @ w1.T + b1 + v2 @ w2.T + b2
        cache = (gap, z1, v1, z2, v2)
    return sigmoid(z), z, cache


def channel_attention(x: Tensor, w1, b1, w2, b2, spec: CBAMSpec):
    """Per-channel gates from the pooled input. Returns (gate map (n, c, 1, 1),
    gated feature map). Gates depend on x only through its per-channel means."""
    if x.c != spec.channels:
        raise ConfigError(f"input has {x.c} channels, spec expects {spec.channels}")
    _check_channel_dims(spec, w1, b1, w2, b2)
    gate, _, _ = _channel_gate(x, w1, b1, w2, b2, spec)
    m_c = gate[:, :, None, None]
    return Tensor(m_c), Tensor(m_c * x.data)


def channel_attention_backward(x: Tensor, w1, b1, w2, b2, spec: CBAMSpec, upstream_fc: Tensor):
    """Gradients of <upstream_fc, gated map> w.r.t. x and all four parameters."""
    if upstream_fc.shape != x.shape:
        raise ConfigError("upstream shape must match input")
    _check_channel_dims(spec, w1, b1, w2, b2)
    gate, z, (gap, z1, v1, z2, v2) = _channel_gate(x, w1, b1, w2, b2, spec)

    up = upstream_fc.data
    d_gate = (up * x.data).sum(axis=(2, 3))
    grad_x = up * gate[:, :, None, None]
    dz = d_gate * gate * (1.0 - gate)

    if spec.channel_mlp == "prose":
        gb2 = dz.sum(axis=0)
        gw2 = dz.T @ v1
        dv1 = dz @ w2
        dz1 = dv1 * relu_grad(z1)
        gb1 = dz1.sum(axis=0)
        gw1 = dz1.T @ gap
        d_gap = dz1 @ w1
    else:
        # W1/b1 and W2/b2 each appear twice: inside their relu branch and in
        # the output combination, so the gradients accumulate across both uses.
        gw1 = dz.T @ v1
        gw2 = dz.T @ v2
        gb1 = dz.sum(axis=0)
        gb2 = dz.sum(axis=0)
        dv1 = dz @ w1
        dv2 = dz @ w2
        dz1 = dv1 * relu_grad(z1)
        dz2 = dv2 * relu_grad(z2)
        gw1 = gw1 + dz1.T @ gap
        gb1 = gb1 + dz1.sum(axis=0)
        gw2 = gw2 + dz2.T @ gap
        gb2 = gb2 + dz2.sum(axis=0)
        d_gap = dz1 @ w1 + dz2 @ w2

    grad_x = grad_x + (d_gap / (x.h * x.w))[:, :, None, None]
    return Tensor(grad_x), gw1, gb1, gw2, gb2


# ---------------------------------------------------------------------------
# spatial attention
# ---------------------------------------------------------------------------

def spatial_attention(x: Tensor, conv_w: Tensor, conv_b, spec: CBAMSpec):
    """Per-position gates from channel max/mean statistics. Returns
    (gate map (n, 1, h, w), gated feature map)."""
    from .ops import spatial_stats

    stats = spatial_stats(x)
    z = conv2d_forward(stats, conv_w, conv_b, spec.spatial_conv_spec())
    m_s = sigmoid(z.data)
    return Tensor(m_s), Tensor(m_s * x.data)


def spatial_attention_backward(x: Tensor, conv_w: Tensor, conv_b, spec: CBAMSpec, upstream_fs: Tensor):
    from .ops import spatial_stats, spatial_stats_backward

    if upstream_fs.shape != x.shape:
        raise ConfigError("upstream shape must match input")
    stats = spatial_stats(x)
    cspec = spec.spatial_conv_spec()
    z = conv2d_forward(stats, conv_w, conv_b, cspec)
    m_s = sigmoid(z.data)

    up = upstream_fs.data
    d_ms = (up * x.data).sum(axis=1, keepdims=True)
    grad_x = up * m_s
    dz = Tensor(d_ms * m_s * (1.0 - m_s))
    d_stats, gw, gb = conv2d_backward(stats, conv_w, cspec, dz)
    grad_x = grad_x + spatial_stats_backward(x, d_stats).data
    return Tensor(grad_x), gw, gb


# ---------------------------------------------------------------------------
# full block
# ---------------------------------------------------------------------------

def cbam_forward(x: Tensor, params: CBAMParams, spec: CBAMSpec) -> Tensor:
    """Apply both attention gates.

    sequential: spatial attention consumes the channel-gated map.
    literal: both gates consume x and the two gated maps are multiplied,
    so the result carries x twice.
    """
    _, f_c = channel_attention(x, params.w1, params.b1, params.w2, params.b2, spec)
    if spec.composition == "sequential":
        _, f_s = spatial_attention(f_c, params.spatial_w, params.spatial_b, spec)
        return f_s
    _, f_s = spatial_attention(x, params.spatial_w, params.spatial_b, spec)
    return Tensor(f_c.data * f_s.data)


def cbam_backward(x: Tensor, params: CBAMParams, spec: CBAMSpec, upstream: Tensor):
    if upstream.shape != x.shape:
        raise ConfigError("upstream shape must match input (cbam preserves shape)")
    if spec.composition == "sequential":
        _, f_c = channel_attention(x, params.w1, params.b1, params.w2, params.b2, spec)
        g_fc, gsw, gsb = spatial_attention_backward(
            f_c, params.spatial_w, params.spatial_b, spec, upstream
        )
        grad_x, gw1, gb1, gw2, gb2 = channel_attention_backward(
            x, params.w1, params.b1, params.w2, params.b2, spec, g_fc
        )
    else:
        _, f_c = channel_attention(x, params.w1, params.b1, params.w2, params.b2, spec)
        _, f_s = spatial_attention(x, params.spatial_w, params.spatial_b, spec)
        up_fc = Tensor(upstream.data * f_s.data)
        up_fs = Tensor(upstream.data * f_c.data)
        gx_c, gw1, gb1, gw2, gb2 = channel_attention_backward(
            x, params.w1, params.b1, params.w2, params.b2, spec, up_fc
        )
        gx_s, gsw, gsb = spatial_attention_backward(
            x, params.spatial_w, params.spatial_b, spec, up_fs
        )
        grad_x = Tensor(gx_c.data + gx_s.data)
    grads = CBAMParams(w1=gw1, b1=gb1, w2=gw2, b2=gb2, spatial_w=gsw, spatial_b=gsb)
    return grad_x, grads
