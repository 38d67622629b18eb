"""Packed binary hash codes and sign quantisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BitWidthMismatchError, ShapeError

SUPPORTED_BITS = (8, 16, 32, 64, 128, 256)


def words_for_bits(nbits: int) -> int:
    return (nbits + 63) // 64


def _tail_mask(nbits: int) -> np.ndarray:
    """Per-word mask zeroing bits at positions >= nbits."""
    nwords = words_for_bits(nbits)
    mask = np.full(nwords, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    rem = nbits % 64
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


@dataclass(frozen=True)
class BinaryCode:
    """nbits packed little-endian into 64-bit words (bit k -> word k//64, bit k%64).

    Bits at positions >= nbits are always zero.
    """

    words: np.ndarray
    nbits: int

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 1 or words.shape[0] != words_for_bits(self.nbits):
            raise ShapeError(
                f"expected {words_for_bits(self.nbits)} words for {self.nbits} bits, "
                f"got shape {self.words.shape}"
            )
        words = words & _tail_mask(self.nbits)
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @classmethod
    def from_bits(cls, bits) -> "BinaryCode":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ShapeError("bit vector must be one-dimensional")
        nbits = bits.shape[0]
        packed = np.packbits(bits, bitorder="little")
        padded = np.zeros(words_for_bits(nbits) * 8, dtype=np.uint8)
        padded[: packed.shape[0]] = packed
        words = np.frombuffer(padded.tobytes(), dtype="<u8").astype(np.uint64)
        return cls(words=words, nbits=nbits)

    def to_bits(self) -> np.ndarray:
        raw = self.words.astype("<u8").tobytes()
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        return bits[: self.nbits]

    def complement(self) -> "BinaryCode":
        return BinaryCode(words=~self.words, nbits=self.nbits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryCode):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.nbits, self.words.tobytes()))


def sign_quantize(embedding) -> BinaryCode:
    """Binarise a real embedding: bit k = 1 iff component k >= 0."""
    h = np.asarray(embedding, dtype=np.float64)
    if h.ndim != 1:
        raise ShapeError("embedding must be one-dimensional")
    return BinaryCode.from_bits((h >= 0.0).astype(np.uint8))


def hamming_distance(a: BinaryCode, b: BinaryCode) -> int:
    """Number of differing bits; popcount of the XOR of the packed words."""
    if a.nbits != b.nbits:
        raise BitWidthMismatchError(f"bit counts differ: {a.nbits} vs {b.nbits}")
    return int(_kernels.hamming_many(a.words, b.words[None, :])[0])


def pack_code_matrix(codes: list[BinaryCode]) -> np.ndarray:
    """Stack codes into an (N, W) uint64 matrix for the scan kernels."""
    if not codes:
        return np.empty((0, 0), dtype=np.uint64)
    nbits = codes[0].nbits
    for c in codes:
        if c.nbits != nbits:
            raise BitWidthMismatchError(f"bit counts differ: {c.nbits} vs {nbits}")
    return np.stack([c.words for c in codes])
