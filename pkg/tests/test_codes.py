import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acir.codes import (
    BinaryCode,
    hamming_distance,
    pack_code_matrix,
    sign_quantize,
    words_for_bits,
)
from acir.errors import BitWidthMismatchError, ShapeError

from conftest import random_code_bits


def code_from_int(value: int, nbits: int) -> BinaryCode:
    bits = [(value >> i) & 1 for i in range(nbits)]
    return BinaryCode.from_bits(np.asarray(bits, dtype=np.uint8))


class TestBinaryCode:
    def test_roundtrip_random_bits(self, rng):
        for nbits in (8, 16, 32, 64, 128, 256, 5, 63, 65):
            bits = random_code_bits(rng, nbits)
            code = BinaryCode.from_bits(bits)
            assert code.nbits == nbits
            np.testing.assert_array_equal(code.to_bits(), bits)

    def test_word_layout_little_endian(self):
        bits = np.zeros(64, dtype=np.uint8)
        bits[0] = 1
        bits[63] = 1
        code = BinaryCode.from_bits(bits)
        assert code.words[0] == np.uint64(1) | np.uint64(1) << np.uint64(63)

    def test_tail_bits_always_zero(self):
        code = BinaryCode.from_bits(np.ones(5, dtype=np.uint8))
        assert code.words[0] == 0b11111
        assert code.complement().words[0] == 0  # complement of all-ones is empty
        partial = BinaryCode.from_bits(np.array([1, 0, 1, 0, 0], dtype=np.uint8))
        assert partial.complement().words[0] == 0b11010

    def test_word_count_validation(self):
        with pytest.raises(ShapeError):
            BinaryCode(words=np.zeros(2, dtype=np.uint64), nbits=8)

    def test_equality_and_hash(self, rng):
        bits = random_code_bits(rng, 32)
        a = BinaryCode.from_bits(bits)
        b = BinaryCode.from_bits(bits)
        assert a == b and hash(a) == hash(b)
        assert a != a.complement()


class TestSignQuantize:
    def test_sign_rule_with_zero_tiebreak(self):
        code = sign_quantize([0.3, -0.2, 0.0, 1.0])
        np.testing.assert_array_equal(code.to_bits(), [1, 0, 1, 1])

    def test_all_negative_gives_zero_code(self):
        code = sign_quantize(-np.ones(16))
        assert not code.to_bits().any()

    def test_antisymmetry_without_zeros(self, rng):
        h = rng.uniform(-1, 1, 64)
        h[h == 0.0] = 0.5
        assert sign_quantize(-h) == sign_quantize(h).complement()

    def test_rejects_matrix_input(self):
        with pytest.raises(ShapeError):
            sign_quantize(np.zeros((2, 4)))


class TestHammingDistance:
    def test_identical_is_zero(self, rng):
        code = BinaryCode.from_bits(random_code_bits(rng, 64))
        assert hamming_distance(code, code) == 0

    def test_complement_is_full_width(self):
        code = code_from_int(0xBEEF, 16)
        assert hamming_distance(code, code.complement()) == 16

    def test_known_popcount(self):
        assert hamming_distance(code_from_int(0xFF00, 16), code_from_int(0x0FF0, 16)) == 8

    def test_width_mismatch(self):
        with pytest.raises(BitWidthMismatchError):
            hamming_distance(code_from_int(1, 8), code_from_int(1, 16))

    @given(data=st.data(), nbits=st.sampled_from([8, 16, 64, 128]))
    @settings(max_examples=50, deadline=None)
    def test_metric_axioms(self, data, nbits):
        bits = st.lists(st.integers(0, 1), min_size=nbits, max_size=nbits)
        a = BinaryCode.from_bits(np.array(data.draw(bits), dtype=np.uint8))
        b = BinaryCode.from_bits(np.array(data.draw(bits), dtype=np.uint8))
        c = BinaryCode.from_bits(np.array(data.draw(bits), dtype=np.uint8))
        assert hamming_distance(a, a) == 0
        assert (hamming_distance(a, b) == 0) == (a == b)
        assert hamming_distance(a, b) == hamming_distance(b, a)
        assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)

    def test_matches_bit_level_count(self, rng):
        for _ in range(50):
            x = random_code_bits(rng, 128)
            y = random_code_bits(rng, 128)
            expected = int(np.sum(x != y))
            assert hamming_distance(BinaryCode.from_bits(x), BinaryCode.from_bits(y)) == expected


def test_pack_code_matrix(rng):
    codes = [BinaryCode.from_bits(random_code_bits(rng, 128)) for _ in range(5)]
    matrix = pack_code_matrix(codes)
    assert matrix.shape == (5, words_for_bits(128))
    with pytest.raises(BitWidthMismatchError):
        pack_code_matrix(codes + [BinaryCode.from_bits(random_code_bits(rng, 64))])
