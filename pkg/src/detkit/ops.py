"""Forward and hand-derived backward passes for the core operators.

Conventions shared by every operator here:

* zero padding only, square kernels, identical stride in both axes;
* conv output size is floor((in - k + 2p) / s) + 1 per spatial axis;
* a backward pass computes the gradients of the scalar sum
  <upstream, output> with respect to each argument, recomputing whatever
  intermediate state it needs from the forward inputs (no tape).

Max reductions (pooling, per-position channel max) break ties by the first
candidate in scan order, which keeps backward deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConfigError, Tensor


@dataclass(frozen=True)
class ConvSpec:
    """Square-kernel 2-D convolution configuration."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.kernel < 1:
            raise ConfigError("kernel size must be >= 1")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.padding < 0:
            raise ConfigError("padding must be >= 0")

    def out_size(self, in_size: int) -> int:
        out = (in_size - self.kernel + 2 * self.padding) // self.stride + 1
        if out < 1:
            raise ConfigError(
                f"conv output size {out} < 1 for in={in_size}, k={self.kernel}, "
                f"p={self.padding}, s={self.stride}"
            )
        return out


@dataclass(frozen=True)
class LinearSpec:
    """Fully connected layer dimensions; weight is (out, in), bias length out."""

    in_features: int
    out_features: int

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ConfigError("feature counts must be >= 1")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _check_conv_args(x: Tensor, w: Tensor, b, spec: ConvSpec) -> None:
    if x.c != spec.in_channels:
        raise ConfigError(f"input has {x.c} channels, spec expects {spec.in_channels}")
    if w.shape != (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel):
        raise ConfigError(
            f"weights shape {w.shape} does not match spec "
            f"({spec.out_channels}, {spec.in_channels}, {spec.kernel}, {spec.kernel})"
        )
    if b is not None and np.asarray(b).shape != (spec.out_channels,):
        raise ConfigError(f"bias length must be {spec.out_channels}")


def conv2d_forward(x: Tensor, w: Tensor, b, spec: ConvSpec) -> Tensor:
    """Cross-correlate x with w and add bias.

    Each output element is the dot product of the kernel with the
    zero-padded input window plus the bias for that output channel.
    """
    _check_conv_args(x, w, b, spec)
    k, s, p = spec.kernel, spec.stride, spec.padding
    h_out, w_out = spec.out_size(x.h), spec.out_size(x.w)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((x.n, spec.out_channels, h_out, w_out), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + s * h_out:s, kj:kj + s * w_out:s]
            out += np.einsum("nchw,oc->nohw", patch, w.data[:, :, ki, kj])
    if b is not None:
        out += np.asarray(b, dtype=x.dtype)[None, :, None, None]
    return Tensor(out)


def conv2d_backward(x: Tensor, w: Tensor, spec: ConvSpec, upstream: Tensor):
    """Gradients of <upstream, conv2d_forward(x, w, b)> w.r.t. x, w and b."""
    _check_conv_args(x, w, None, spec)
    k, s, p = spec.kernel, spec.stride, spec.padding
    h_out, w_out = spec.out_size(x.h), spec.out_size(x.w)
    if upstream.shape != (x.n, spec.out_channels, h_out, w_out):
        raise ConfigError(
            f"upstream shape {upstream.shape} does not match forward output "
            f"({x.n}, {spec.out_channels}, {h_out}, {w_out})"
        )
    up = upstream.data
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    grad_w = np.zeros_like(w.data)
    grad_xp = np.zeros_like(xp)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + s * h_out:s, kj:kj + s * w_out:s]
            grad_w[:, :, ki, kj] = np.einsum("nohw,nchw->oc", up, patch)
            grad_xp[:, :, ki:ki + s * h_out:s, kj:kj + s * w_out:s] += np.einsum(
                "nohw,oc->nchw", up, w.data[:, :, ki, kj]
            )
    grad_x = grad_xp[:, :, p:p + x.h, p:p + x.w]
    grad_b = up.sum(axis=(0, 2, 3))
    return Tensor(grad_x), Tensor(grad_w), grad_b


# ---------------------------------------------------------------------------
# pooling and channel statistics
# ---------------------------------------------------------------------------

def global_pool(x: Tensor, kind: str) -> Tensor:
    """Per-channel mean or max over all spatial positions, output (n, c, 1, 1)."""
    if x.h * x.w < 1:
        raise ConfigError("global pool needs a non-empty spatial extent")
    if kind == "avg":
        out = x.data.mean(axis=(2, 3), keepdims=True)
    elif kind == "max":
        out = x.data.max(axis=(2, 3), keepdims=True)
    else:
        raise ConfigError(f"unknown pool kind {kind!r} (want 'avg' or 'max')")
    return Tensor(out)


def global_pool_backward(x: Tensor, kind: str, upstream: Tensor) -> Tensor:
    if upstream.shape != (x.n, x.c, 1, 1):
        raise ConfigError("upstream must have shape (n, c, 1, 1)")
    up = upstream.data
    if kind == "avg":
        grad = np.broadcast_to(up / (x.h * x.w), x.shape).copy()
    elif kind == "max":
        flat = x.data.reshape(x.n, x.c, -1)
        arg = flat.argmax(axis=2)
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[:, :, None], up.reshape(x.n, x.c, 1), axis=2)
        grad = gflat.reshape(x.shape)
    else:
        raise ConfigError(f"unknown pool kind {kind!r}")
    return Tensor(grad)


def spatial_stats(x: Tensor) -> Tensor:
    """Per-position channel statistics: channel 0 is the max over channels,
    channel 1 the mean. Output shape (n, 2, h, w)."""
    if x.c < 1:
        raise ConfigError("need at least one channel")
    mx = x.data.max(axis=1, keepdims=True)
    mean = x.data.mean(axis=1, keepdims=True)
    return Tensor(np.concatenate([mx, mean], axis=1))


def spatial_stats_backward(x: Tensor, upstream: Tensor) -> Tensor:
    if upstream.shape != (x.n, 2, x.h, x.w):
        raise ConfigError("upstream must have shape (n, 2, h, w)")
    up_max = upstream.data[:, 0:1]
    up_mean = upstream.data[:, 1:2]
    grad = np.zeros_like(x.data)
    arg = x.data.argmax(axis=1)
    np.put_along_axis(grad, arg[:, None], up_max, axis=1)
    grad += up_mean / x.c
    return Tensor(grad)


def _maxpool_same(x: np.ndarray, window: int):
    """Stride-1 shape-preserving max pool; returns pooled map and the flat
    window offset of each winner (first offset wins ties)."""
    p = (window - 1) // 2
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    best = None
    arg = None
    idx = 0
    for di in range(window):
        for dj in range(window):
            sl = xp[:, :, di:di + h, dj:dj + w]
            if best is None:
                best = sl.copy()
                arg = np.zeros((n, c, h, w), dtype=np.int32)
            else:
                mask = sl > best
                np.copyto(best, sl, where=mask)
                arg[mask] = idx
            idx += 1
    return best, arg


def _maxpool_same_backward(x: np.ndarray, window: int, upstream: np.ndarray) -> np.ndarray:
    p = (window - 1) // 2
    n, c, h, w = x.shape
    _, arg = _maxpool_same(x, window)
    grad_p = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    idx = 0
    for di in range(window):
        for dj in range(window):
            grad_p[:, :, di:di + h, dj:dj + w] += upstream * (arg == idx)
            idx += 1
    return grad_p[:, :, p:p + h, p:p + w]


def spp(x: Tensor, pool_windows) -> Tensor:
    """Pyramid pooling: concatenate x with one shape-preserving max pool per
    window size. Output channels = c * (1 + len(pool_windows))."""
    windows = list(pool_windows)
    for wsz in windows:
        if wsz % 2 == 0:
            raise ConfigError(f"pool window {wsz} must be odd")
        if wsz < 1:
            raise ConfigError("pool window must be >= 1")
    parts = [x.data]
    for wsz in windows:
        pooled, _ = _maxpool_same(x.data, wsz)
        parts.append(pooled)
    return Tensor(np.concatenate(parts, axis=1))


def spp_backward(x: Tensor, pool_windows, upstream: Tensor) -> Tensor:
    windows = list(pool_windows)
    expect_c = x.c * (1 + len(windows))
    if upstream.shape != (x.n, expect_c, x.h, x.w):
        raise ConfigError(f"upstream must have {expect_c} channels")
    grad = upstream.data[:, :x.c].copy()
    for g, wsz in enumerate(windows):
        chunk = upstream.data[:, (g + 1) * x.c:(g + 2) * x.c]
        grad += _maxpool_same_backward(x.data, wsz, chunk)
    return Tensor(grad)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    return (x > 0).astype(x.dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.result_type(x.dtype, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 - s)


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def mish(x: np.ndarray) -> np.ndarray:
    return x * np.tanh(softplus(x))


def mish_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(softplus(x))
    return t + x * (1.0 - t * t) * sigmoid(x)


_ACT_FUNCS = {"relu": (relu, relu_grad), "sigmoid": (sigmoid, sigmoid_grad), "mish": (mish, mish_grad)}


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: relu, sigmoid, or mish."""
    if kind not in _ACT_FUNCS:
        raise ConfigError(f"unknown activation {kind!r}")
    return Tensor(_ACT_FUNCS[kind][0](x.data))


def activation_backward(x: Tensor, kind: str, upstream: Tensor) -> Tensor:
    if kind not in _ACT_FUNCS:
        raise ConfigError(f"unknown activation {kind!r}")
    if upstream.shape != x.shape:
        raise ConfigError("upstream shape must match input")
    return Tensor(_ACT_FUNCS[kind][1](x.data) * upstream.data)


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------

def _as_batch(x: np.ndarray):
    x = np.asarray(x)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ConfigError("fully connected input must be a vector or a batch of vectors")


def fully_connected(x, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out = W @ x + b, applied rowwise for batched input (batch, in)."""
    xb, squeeze = _as_batch(x)
    w = np.asarray(weights)
    b = np.asarray(bias)
    if w.ndim != 2 or xb.shape[1] != w.shape[1]:
        raise ConfigError(f"weight shape {w.shape} incompatible with input of {xb.shape[1]} features")
    if b.shape != (w.shape[0],):
        raise ConfigError(f"bias length must be {w.shape[0]}")
    out = xb @ w.T + b
    return out[0] if squeeze else out


def fully_connected_backward(x, weights: np.ndarray, upstream):
    """Gradients of <upstream, W x + b> w.r.t. x, W and b."""
    xb, squeeze = _as_batch(x)
    ub, _ = _as_batch(upstream)
    w = np.asarray(weights)
    if ub.shape != (xb.shape[0], w.shape[0]):
        raise ConfigError("upstream shape must match forward output")
    grad_x = ub @ w
    grad_w = ub.T @ xb
    grad_b = ub.sum(axis=0)
    if squeeze:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b
