import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocore.errors import DimMismatch, NonBinaryValue
from neurocore.numerics import (BitTensor, Half, Tensor5, check_binary, hadd, half_add, half_mul, hmul,
                                pack_bits, pack_spikes, to_half_exact, unpack_bits, unpack_spikes)
from oracles import softfloat_add, softfloat_mul

finite_bits = st.integers(0, 0xFFFF).filter(lambda b: (b >> 10) & 0x1F != 0x1F)
any_bits = st.integers(0, 0xFFFF).filter(lambda b: not ((b >> 10) & 0x1F == 0x1F and b & 0x3FF))


def _bits(x) -> int:
    return int(np.asarray(x, dtype=np.float16).view(np.uint16))


def _half(b) -> float:
    return float(np.uint16(b).view(np.float16))


@settings(max_examples=3000, deadline=None)
@given(finite_bits, finite_bits)
def test_add_matches_softfloat(a, b):
    assert half_add(Half(a), Half(b)).bits == softfloat_add(a, b)


@settings(max_examples=3000, deadline=None)
@given(finite_bits, finite_bits)
def test_mul_matches_softfloat(a, b):
    assert half_mul(Half(a), Half(b)).bits == softfloat_mul(a, b)


@settings(max_examples=500, deadline=None)
@given(any_bits, any_bits)
def test_specials_match_softfloat(a, b):
    assert half_add(Half(a), Half(b)).bits == softfloat_add(a, b)
    assert half_mul(Half(a), Half(b)).bits == softfloat_mul(a, b)


@settings(max_examples=2000, deadline=None)
@given(st.floats(-65519.0, 65519.0, allow_nan=False))
def test_rounding_matches_numpy_cast(x):
    # numpy's float64 -> float16 conversion rounds correctly in one step
    assert _bits(to_half_exact(np.array([x]))[0]) == _bits(np.float16(x))


def test_ties_round_to_even():
    one = 1.0
    ulp = 2.0 ** -10
    assert to_half_exact(np.array([one + ulp / 2]))[0] == one
    assert to_half_exact(np.array([one + 3 * ulp / 2]))[0] == one + 2 * ulp
    # smallest subnormal halfway case
    assert to_half_exact(np.array([2.0 ** -25]))[0] == 0.0
    assert to_half_exact(np.array([3 * 2.0 ** -25]))[0] == 2 * 2.0 ** -24


def test_overflow_and_signed_zero():
    assert half_add(Half.from_float(65504.0), Half.from_float(32.0)).value == np.inf
    # 65520 is the halfway point; the odd mantissa of 65504 rounds away
    assert half_add(Half.from_float(65504.0), Half.from_float(16.0)).value == np.inf
    assert half_add(Half.from_float(65504.0), Half.from_float(8.0)).value == 65504.0
    z = half_add(Half.from_float(1.0), Half.from_float(-1.0))
    assert z.bits == 0x0000
    assert half_add(Half.from_float(-0.0), Half.from_float(-0.0)).bits == 0x8000
    assert half_mul(Half.from_float(-1.0), Half.from_float(0.0)).bits == 0x8000


def test_vector_ops_match_scalar():
    rng = np.random.default_rng(0)
    a = (rng.normal(size=200) * 100).astype(np.float16)
    b = (rng.normal(size=200) * 100).astype(np.float16)
    s, p = hadd(a, b), hmul(a, b)
    for i in range(200):
        assert _bits(s[i]) == half_add(a[i], b[i]).bits
        assert _bits(p[i]) == half_mul(a[i], b[i]).bits


def test_half_bit_range_and_neg():
    with pytest.raises(ValueError):
        Half(0x10000)
    assert (-Half.from_float(2.0)).value == -2.0


def test_tensor5_index_and_roundtrip(tmp_path):
    t = Tensor5.zeros((2, 3, 4, 5, 6))
    t[1, 2, 3, 4, 5] = 1.5
    assert t[1, 2, 3, 4, 5].value == 1.5
    assert t.offset(1, 2, 3, 4, 5) == 2 * 3 * 4 * 5 * 6 - 1
    with pytest.raises(IndexError):
        t[2, 0, 0, 0, 0]
    t.save(tmp_path / "t.bin")
    assert Tensor5.load(tmp_path / "t.bin") == t
    with pytest.raises(DimMismatch):
        Tensor5((1, 2, 3, 4))
    with pytest.raises(DimMismatch):
        Tensor5((1, 1, 1, 1, 2), [1.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
def test_bit_packing_roundtrip(bits):
    assert list(unpack_bits(pack_bits(bits), len(bits))) == bits


def test_spike_pack_and_binary_check():
    rng = np.random.default_rng(1)
    t = Tensor5((1, 2, 3, 4, 5), (rng.random(120) < 0.4).astype(np.float16))
    b = pack_spikes(t)
    assert isinstance(b, BitTensor) and len(b) == 120 and len(b.data) == 15
    assert unpack_spikes(b) == t
    with pytest.raises(NonBinaryValue):
        check_binary([0.0, 0.5])
    bad = Tensor5((1, 1, 1, 1, 2), [1.0, 2.0])
    assert not bad.is_binary()
    with pytest.raises(NonBinaryValue):
        pack_spikes(bad)
