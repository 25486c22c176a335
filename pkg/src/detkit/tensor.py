"""Dense rank-4 tensors in (n, c, h, w) layout.

The Tensor type is the value currency of the whole library: feature maps,
convolution weights, gradients. Data is stored row-major in (n, c, h, w)
order, 64-bit by default. A global checked mode controls whether every
construction validates shape and finiteness; verification suites run with
it on, training may switch it off for speed.
"""

from __future__ import annotations

import os
import struct

import numpy as np

DEFAULT_DTYPE = np.float64

_DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}

_TENSOR_MAGIC = b"DKT1"


class ConfigError(ValueError):
    """Invalid shapes, dimensions or operator configuration."""


class TensorFormatError(IOError):
    """Malformed or truncated tensor file."""


_checked = True


def set_checked(flag: bool) -> None:
    """Toggle validation (shape and finiteness checks) on tensor construction."""
    global _checked
    _checked = bool(flag)


def is_checked() -> bool:
    return _checked


def verify_mode_forced() -> bool:
    """True when the DETKIT_VERIFY environment variable demands checked 64-bit runs."""
    return os.environ.get("DETKIT_VERIFY", "") == "1"


class Tensor:
    """Rank-4 numeric array, shape (n, c, h, w)."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _DTYPE_TAGS:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise ConfigError(f"tensor must be rank 4 (n, c, h, w), got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        if _checked and arr.size and not np.isfinite(arr).all():
            raise ConfigError("tensor contains NaN or Inf")
        self.data = arr

    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype))

    @classmethod
    def full(cls, shape, value, dtype=DEFAULT_DTYPE) -> "Tensor":
        return cls(np.full(shape, value, dtype=dtype))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


def save_tensor(t: Tensor, path) -> None:
    """Write a tensor to disk.

    Layout (little-endian): magic "DKT1", u8 dtype tag (1=f32, 2=f64),
    four u32 dims, then the raw elements in (n, c, h, w) row-major order.
    """
    tag = _DTYPE_TAGS[t.dtype]
    header = _TENSOR_MAGIC + struct.pack("<B4I", tag, *t.shape)
    payload = np.ascontiguousarray(t.data).astype(t.dtype.newbyteorder("<")).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_tensor(path) -> Tensor:
    """Read a tensor written by :func:`save_tensor`. Round-trips bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head_len = 4 + 1 + 16
    if len(blob) < head_len:
        raise TensorFormatError("tensor file truncated (header incomplete)")
    if blob[:4] != _TENSOR_MAGIC:
        raise TensorFormatError("bad magic, not a tensor file")
    tag, n, c, h, w = struct.unpack("<B4I", blob[4:head_len])
    if tag not in _TAG_DTYPES:
        raise TensorFormatError(f"unknown dtype tag {tag}")
    dtype = _TAG_DTYPES[tag]
    count = n * c * h * w
    expected = head_len + count * dtype.itemsize
    if len(blob) != expected:
        raise TensorFormatError(
            f"tensor file truncated or oversized: expected {expected} bytes, got {len(blob)}"
        )
    flat = np.frombuffer(blob[head_len:], dtype=dtype.newbyteorder("<")).astype(dtype)
    return Tensor(flat.reshape(n, c, h, w))
