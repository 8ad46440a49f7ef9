"""IEEE-754 binary16 arithmetic and the tensor containers built on it.

Values live in float64 arrays while kernels run: every binary16 number is
exactly representable there, and the exact sum or product of two binary16
values fits in 53 bits, so ``round_half(a + b)`` is a correctly rounded
binary16 addition with a single rounding step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

from .errors import DimMismatch, NonBinaryValue

HALF_MODE = "half"
WIDE_MODE = "wide"
ACCUM_MODES = (HALF_MODE, WIDE_MODE)


@intrinsic
def _f64_bits(typingctx, x):
    sig = types.uint64(types.float64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.IntType(64))

    return sig, codegen


@intrinsic
def _bits_f64(typingctx, x):
    sig = types.float64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.DoubleType())

    return sig, codegen


_SIGN = np.uint64(0x8000000000000000)
_EXP_INF = np.uint64(0x7FF0000000000000)
_MIN_NORMAL = np.uint64(0x3F10000000000000)  # 2**-14
_OVERFLOW = np.uint64(0x40F0000000000000)  # 2**16
_ROUND_BIAS = np.uint64((1 << 41) - 1)
_DROP_MASK = np.uint64(~((1 << 42) - 1) & 0xFFFFFFFFFFFFFFFF)
_SHIFT = np.uint64(42)
_ONE = np.uint64(1)
_SUBNORMAL_MAGIC = 1.5 * 2.0**28  # ulp of the magic constant is 2**-24


@numba.njit(inline="always", cache=True)
def round_half(x):
    """Round a float64 to the nearest binary16 value (ties to even)."""
    b = _f64_bits(x)
    sign = b & _SIGN
    a = b ^ sign
    if a >= _EXP_INF:
        return x
    if a >= _MIN_NORMAL:
        a = a + _ROUND_BIAS + ((a >> _SHIFT) & _ONE)
        a = a & _DROP_MASK
        if a >= _OVERFLOW:
            a = _EXP_INF
        return _bits_f64(a | sign)
    y = (_bits_f64(a) + _SUBNORMAL_MAGIC) - _SUBNORMAL_MAGIC
    return _bits_f64(_f64_bits(y) | sign)


@numba.njit(inline="always", cache=True)
def round_single(x):
    """Round a float64 to float32 precision (used by the wide-accumulate mode)."""
    return np.float64(np.float32(x))


@numba.njit(cache=True)
def _round_array(x, out):
    flat = x.ravel()
    o = out.ravel()
    for i in range(flat.size):
        o[i] = round_half(flat[i])


def to_half_exact(x) -> np.ndarray:
    """Round an array to binary16 values, returned as float64."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _round_array(x, out)
    return out


@numba.njit(cache=True)
def _add_arrays(a, b, out):
    for i in range(a.size):
        out[i] = round_half(a[i] + b[i])


@numba.njit(cache=True)
def _mul_arrays(a, b, out):
    for i in range(a.size):
        out[i] = round_half(a[i] * b[i])


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float16), dtype=np.float64)


def hadd(a, b) -> np.ndarray:
    """Elementwise binary16 addition of two float16 arrays."""
    a64, b64 = np.broadcast_arrays(_as_f64(a), _as_f64(b))
    a64 = np.ascontiguousarray(a64).ravel()
    b64 = np.ascontiguousarray(b64).ravel()
    out = np.empty_like(a64)
    _add_arrays(a64, b64, out)
    return out.astype(np.float16).reshape(np.broadcast_shapes(np.shape(a), np.shape(b)))


def hmul(a, b) -> np.ndarray:
    """Elementwise binary16 multiplication of two float16 arrays."""
    a64, b64 = np.broadcast_arrays(_as_f64(a), _as_f64(b))
    a64 = np.ascontiguousarray(a64).ravel()
    b64 = np.ascontiguousarray(b64).ravel()
    out = np.empty_like(a64)
    _mul_arrays(a64, b64, out)
    return out.astype(np.float16).reshape(np.broadcast_shapes(np.shape(a), np.shape(b)))


@dataclass(frozen=True)
class Half:
    """A binary16 scalar held as its 16-bit pattern."""

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise ValueError(f"bit pattern out of range: {self.bits:#x}")

    @classmethod
    def from_float(cls, x: float) -> "Half":
        return cls(int(np.float16(round_half(float(x))).view(np.uint16)))

    def __float__(self) -> float:
        return float(np.uint16(self.bits).view(np.float16))

    @property
    def value(self) -> float:
        return float(self)

    def __neg__(self) -> "Half":
        return Half(self.bits ^ 0x8000)

    def __repr__(self) -> str:
        return f"Half({float(self)!r}, bits={self.bits:#06x})"


def _coerce(x) -> float:
    if isinstance(x, Half):
        return float(x)
    return float(np.float16(x))


def half_add(a, b) -> Half:
    return Half.from_float(round_half(_coerce(a) + _coerce(b)))


def half_mul(a, b) -> Half:
    return Half.from_float(round_half(_coerce(a) * _coerce(b)))


class Tensor5:
    """Dense (N, T, C, H, W) tensor of binary16 values.

    Supports in-place element writes; callers serialize access when sharing.
    """

    HEADER = struct.Struct("<5I")

    def __init__(self, dims, data=None):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 5 or any(d < 0 for d in dims):
            raise DimMismatch(f"Tensor5 needs 5 non-negative dims, got {dims}")
        self.dims = dims
        if data is None:
            self.data = np.zeros(dims, dtype=np.float16)
        else:
            arr = np.asarray(data, dtype=np.float16)
            if arr.size != int(np.prod(dims)):
                raise DimMismatch(f"data length {arr.size} does not match dims {dims}")
            self.data = np.ascontiguousarray(arr.reshape(dims))

    @classmethod
    def zeros(cls, dims) -> "Tensor5":
        return cls(dims)

    def offset(self, n, t, c, h, w) -> int:
        N, T, C, H, W = self.dims
        idx = (n, t, c, h, w)
        if any(not 0 <= i < d for i, d in zip(idx, self.dims)):
            raise IndexError(f"index {idx} out of bounds for {self.dims}")
        return (((n * T + t) * C + c) * H + h) * W + w

    def __getitem__(self, idx) -> Half:
        off = self.offset(*idx)
        return Half(int(self.data.reshape(-1).view(np.uint16)[off]))

    def __setitem__(self, idx, value):
        off = self.offset(*idx)
        self.data.reshape(-1)[off] = np.float16(_coerce(value))

    def __eq__(self, other):
        if not isinstance(other, Tensor5):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(
            self.data.view(np.uint16), other.data.view(np.uint16)
        )

    def is_binary(self) -> bool:
        bits = self.data.view(np.uint16)
        return bool(np.all((bits == 0) | (bits == 0x3C00)))

    def to_bytes(self) -> bytes:
        return self.HEADER.pack(*self.dims) + self.data.astype("<f2").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Tensor5":
        dims = cls.HEADER.unpack_from(buf)
        payload = np.frombuffer(buf, dtype="<f2", offset=cls.HEADER.size)
        return cls(dims, payload.astype(np.float16))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Tensor5":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def __repr__(self):
        return f"Tensor5(dims={self.dims})"


@dataclass(frozen=True)
class BitTensor:
    dims: tuple
    data: bytes

    def __len__(self):
        return int(np.prod(self.dims))


def check_binary(values, what="spike tensor"):
    bits = np.asarray(values, dtype=np.float16).view(np.uint16)
    if not np.all((bits == 0) | (bits == 0x3C00)):
        raise NonBinaryValue(f"{what} contains values other than 0.0/1.0")


def pack_bits(values) -> bytes:
    """Pack a flat {0,1} array into bytes, least significant bit first."""
    return np.packbits(np.asarray(values, dtype=np.uint8).reshape(-1), bitorder="little").tobytes()


def unpack_bits(buf, count: int) -> np.ndarray:
    raw = np.frombuffer(bytes(buf), dtype=np.uint8)
    return np.unpackbits(raw, count=count, bitorder="little")


def pack_spikes(t: Tensor5) -> BitTensor:
    check_binary(t.data)
    return BitTensor(t.dims, pack_bits(t.data.reshape(-1) != 0))


def unpack_spikes(b: BitTensor) -> Tensor5:
    bits = unpack_bits(b.data, len(b))
    return Tensor5(b.dims, bits.astype(np.float16))
