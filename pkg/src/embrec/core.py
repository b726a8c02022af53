"""Deterministic primitives: PRNG, dtype conversion, checksums, tensor checks.

Everything in this module is bit-reproducible across platforms: the PRNG is
splitmix64 (published constants), float16 conversion is IEEE-754 binary16
with round-to-nearest-even, and the checksum is standard CRC-32.  Activation
tensors are plain numpy float32 arrays of shape [seq_len, dim]; compute is
always 32-bit, float16 exists only at rest.
"""

from __future__ import annotations

import zlib
from enum import IntEnum

import numpy as np

from .errors import ShapeError

MASK64 = (1 << 64) - 1

_SM64_GOLDEN = 0x9E3779B97F4A7C15
_SM64_MIX1 = 0xBF58476D1CE4E5B9
_SM64_MIX2 = 0x94D049BB133111EB


class Dtype(IntEnum):
    """At-rest element type of a stored activation payload."""

    F32 = 0
    F16 = 1

    @property
    def itemsize(self) -> int:
        return 4 if self is Dtype.F32 else 2

    @property
    def numpy_dtype(self) -> np.dtype:
        # explicit little-endian: the on-disk byte order is part of the format
        return np.dtype("<f4") if self is Dtype.F32 else np.dtype("<f2")

    def __str__(self) -> str:
        return "f32" if self is Dtype.F32 else "f16"

    @classmethod
    def from_str(cls, s: str) -> "Dtype":
        if s == "f32":
            return cls.F32
        if s == "f16":
            return cls.F16
        raise ValueError(f"unknown dtype {s!r} (expected 'f32' or 'f16')")


class Rng:
    """splitmix64 generator; a value type, cheap to copy and fork.

    Identical seeds produce identical streams on every platform.  For
    independent concurrent streams, fork with :meth:`split` instead of
    sharing one instance.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _SM64_GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _SM64_MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _SM64_MIX2) & MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float, hi: float) -> float:
        """One float32-rounded draw in [lo, hi), computed in float64."""
        if not lo < hi:
            raise ValueError(f"empty range: lo={lo!r} must be < hi={hi!r}")
        v = self.next_u64()
        return float(np.float32(lo + (hi - lo) * (v / 2.0**64)))

    def fill_uniform(self, n: int, lo: float, hi: float) -> np.ndarray:
        """Vectorized equivalent of n uniform() calls; bit-identical stream.

        The additive state walk makes the whole block computable in one
        shot: state_i = state + i * golden (mod 2^64), then the mix.
        """
        if not lo < hi:
            raise ValueError(f"empty range: lo={lo!r} must be < hi={hi!r}")
        if n < 0:
            raise ValueError("n must be >= 0")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + np.uint64(_SM64_GOLDEN) * steps
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_SM64_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_SM64_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _SM64_GOLDEN) & MASK64
        u = z.astype(np.float64) * 2.0**-64
        return (lo + (hi - lo) * u).astype(np.float32)

    def split(self) -> "Rng":
        """Fork an independent stream (re-seeded from this one's output)."""
        return Rng(self.next_u64())


def f32_to_f16(x: float) -> int:
    """IEEE-754 binary16 bit pattern of x, round-to-nearest-even.

    Overflow maps to signed infinity, underflow to signed zero/subnormal;
    total on all finite and non-finite inputs.
    """
    with np.errstate(over="ignore"):
        return int(np.float32(x).astype(np.float16).view(np.uint16))


def f16_to_f32(bits: int) -> float:
    """Value of a binary16 bit pattern, widened exactly to float32."""
    return float(np.uint16(bits).view(np.float16).astype(np.float32))


def checksum(data: bytes) -> int:
    """CRC-32 (polynomial 0x04C11DB7 reflected, init/final 0xFFFFFFFF)."""
    return zlib.crc32(data) & 0xFFFFFFFF


def tensor_bytes(arr: np.ndarray, dtype: Dtype = Dtype.F32) -> bytes:
    """Row-major little-endian payload bytes of an activation tensor."""
    return np.ascontiguousarray(arr).astype(dtype.numpy_dtype).tobytes()


def tensor_checksum(arr: np.ndarray) -> int:
    """CRC-32 of the tensor's float32 little-endian bytes."""
    return checksum(tensor_bytes(arr, Dtype.F32))


def as_activation(arr, name: str = "tensor") -> np.ndarray:
    """Validate and return an activation tensor: [S x d] float32, finite."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D [seq_len, dim], got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name}: seq_len and dim must be >= 1, got {a.shape}")
    if a.dtype != np.float32:
        a = a.astype(np.float32)
    if not np.isfinite(a).all():
        raise ShapeError(f"{name}: contains NaN or Inf")
    return a


def check_finite(arr: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise ShapeError(f"{name}: contains NaN or Inf")
    return arr
