import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebnet.bitcore import (
    BitPlaneTensor,
    Shape4,
    binarize_pack,
    deserialize_bitplane,
    popcount64,
    serialize_bitplane,
    sign_plus,
    unpack,
    unpack_bits,
    xnor_popcount_dot,
)
from ebnet.errors import BitRangeError, FormatError, ShapeError


def _row(values) -> np.ndarray:
    return binarize_pack(np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1)).words[0]


def test_zero_maps_to_plus_one():
    b = binarize_pack(np.array([0.3, -1.2, 0.0, -0.0001]).reshape(1, 1, 1, 4))
    assert unpack_bits(b).reshape(-1).tolist() == [1, 0, 1, 0]
    assert int(b.words[0, 0]) == 0b0101


def test_all_positive_fills_one_word_with_zero_padding():
    b = binarize_pack(np.ones((1, 1, 2, 2)))
    assert b.words.shape == (1, 1)
    assert b.words_per_row == 1
    assert int(b.words[0, 0]) == 0b1111


@pytest.mark.parametrize("axis", ["chw", "c", "w"])
def test_round_trip_is_sign(axis):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 3, 8, 8))
    x[0, 1, 2, 3] = 0.0
    out = unpack(binarize_pack(x, axis))
    assert out.shape == x.shape
    np.testing.assert_array_equal(out, sign_plus(x))


def test_unpack_of_hand_built_words():
    b = BitPlaneTensor(shape=Shape4(1, 1, 1, 3), axis="chw", words=np.array([[0b101]], dtype=np.uint64))
    assert unpack(b).reshape(-1).tolist() == [1.0, -1.0, 1.0]

    zeros = BitPlaneTensor(shape=Shape4(1, 1, 1, 3), axis="chw", words=np.zeros((1, 1), dtype=np.uint64))
    assert unpack(zeros).reshape(-1).tolist() == [-1.0, -1.0, -1.0]


def test_padding_bits_must_be_zero():
    with pytest.raises(ValueError):
        BitPlaneTensor(shape=Shape4(1, 1, 1, 3), axis="chw", words=np.array([[0b1000]], dtype=np.uint64))


def test_empty_tensor_is_rejected():
    with pytest.raises(ShapeError):
        binarize_pack(np.zeros((1, 0, 3, 3)))
    with pytest.raises(ShapeError):
        binarize_pack(np.zeros((3, 3)))


def test_channel_axis_packs_one_row_per_pixel():
    x = np.random.default_rng(1).standard_normal((2, 70, 3, 3))
    b = binarize_pack(x, "c")
    assert b.words.shape == (2 * 3 * 3, 2)
    assert b.row_length == 70


def test_popcount_paths_agree():
    rng = np.random.default_rng(3)
    words = rng.integers(0, 2**63, size=4096, dtype=np.uint64) * np.uint64(2) + rng.integers(0, 2, size=4096).astype(np.uint64)
    words[:3] = [0, 0xFFFFFFFFFFFFFFFF, 0x8000000000000001]
    portable = popcount64(words, portable=True)
    np.testing.assert_array_equal(popcount64(words), portable)
    assert portable[:3].tolist() == [0, 64, 2]
    expected = [bin(int(v)).count("1") for v in words[:100]]
    assert portable[:100].tolist() == expected


def test_xnor_dot_examples():
    assert xnor_popcount_dot(_row([1, -1, 1]), _row([1, 1, -1]), 3) == -1
    a = _row(np.linspace(-1, 1, 100))
    assert xnor_popcount_dot(a, a, 100) == 100


def test_xnor_dot_matches_float_dot():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(1, 513))
        a = rng.choice([-1.0, 1.0], size=n)
        b = rng.choice([-1.0, 1.0], size=n)
        assert xnor_popcount_dot(_row(a), _row(b), n) == int(a @ b)


def test_xnor_dot_rejects_n_beyond_capacity():
    a = _row(np.ones(10))
    with pytest.raises(BitRangeError):
        xnor_popcount_dot(a, a, 65)


@settings(max_examples=200, deadline=None)
@given(
    bits_a=st.lists(st.booleans(), min_size=1, max_size=300),
    seed=st.integers(0, 2**32 - 1),
    data=st.data(),
)
def test_dot_equals_n_minus_twice_hamming(bits_a, seed, data):
    n = len(bits_a)
    bits_b = np.random.default_rng(seed).integers(0, 2, size=n).astype(bool)
    n_valid = data.draw(st.integers(0, n))
    a = np.where(bits_a, 1.0, -1.0)
    b = np.where(bits_b, 1.0, -1.0)
    hamming = int(np.sum(np.asarray(bits_a)[:n_valid] != bits_b[:n_valid]))
    assert xnor_popcount_dot(_row(a), _row(b), n_valid) == n_valid - 2 * hamming


def test_serialized_record_layout():
    b = binarize_pack(np.ones((2, 1, 1, 3)))
    raw = serialize_bitplane(b)
    header = np.frombuffer(raw[:20], dtype="<u4").tolist()
    assert header == [2, 1, 1, 3, 1]
    assert np.frombuffer(raw[20:], dtype="<u8").tolist() == [0b111, 0b111]


def test_deserialize_restores_bits_and_reports_end_offset():
    x = np.random.default_rng(5).standard_normal((4, 3, 5, 5))
    raw = b"xx" + serialize_bitplane(binarize_pack(x))
    restored, end = deserialize_bitplane(raw, offset=2)
    assert end == len(raw)
    np.testing.assert_array_equal(unpack(restored), sign_plus(x))


def test_deserialize_truncated_record():
    raw = serialize_bitplane(binarize_pack(np.ones((1, 2, 8, 8))))
    with pytest.raises(FormatError) as info:
        deserialize_bitplane(raw[:-3])
    assert info.value.offset == 20
