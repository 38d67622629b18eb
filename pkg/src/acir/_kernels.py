"""Hamming-distance kernels over packed 64-bit code words.

Two interchangeable backends: numba ``@njit`` loops (default) and a pure
numpy path. Set ``ACIR_NO_NUMBA=1`` to force the numpy path; it is also
used automatically when numba is not importable. Both backends return
identical results (see tests and benchmarks/bench_hamming.py).
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "ACIR_NO_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in {"1", "true", "yes"}


# -- pure numpy backend ------------------------------------------------------

if hasattr(np, "bitwise_count"):

    def _popcount_words(words: np.ndarray) -> np.ndarray:
        return np.bitwise_count(words)

else:
    _BYTE_POPCOUNT = np.unpackbits(
        np.arange(256, dtype=np.uint8)[:, None], axis=1
    ).sum(axis=1).astype(np.uint8)

    def _popcount_words(words: np.ndarray) -> np.ndarray:
        as_bytes = words.view(np.uint8).reshape(words.shape + (8,))
        return _BYTE_POPCOUNT[as_bytes].sum(axis=-1)


def hamming_many_numpy(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Distances from one packed query (W,) to a packed gallery (N, W)."""
    return _popcount_words(np.bitwise_xor(gallery, query[None, :])).sum(
        axis=1, dtype=np.uint32
    )


def pairwise_hamming_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N, M) distance matrix between packed code matrices (N, W) and (M, W)."""
    xor = np.bitwise_xor(a[:, None, :], b[None, :, :])
    return _popcount_words(xor).sum(axis=2, dtype=np.uint32)


# -- numba backend ------------------------------------------------------------

try:  # pragma: no cover - exercised indirectly via the dispatcher
    if _numba_disabled():
        raise ImportError("numba disabled via %s" % _ENV_FLAG)

    from numba import njit

    @njit(cache=True)
    def _popcount_u64(x):
        x -= (x >> np.uint64(1)) & np.uint64(0x5555555555555555)
        x = (x & np.uint64(0x3333333333333333)) + (
            (x >> np.uint64(2)) & np.uint64(0x3333333333333333)
        )
        x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
        return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)

    @njit(cache=True)
    def hamming_many_numba(query, gallery):
        n, w = gallery.shape
        out = np.empty(n, dtype=np.uint32)
        for i in range(n):
            acc = np.uint64(0)
            for j in range(w):
                acc += _popcount_u64(query[j] ^ gallery[i, j])
            out[i] = acc
        return out

    @njit(cache=True)
    def pairwise_hamming_numba(a, b):
        n, w = a.shape
        m = b.shape[0]
        out = np.empty((n, m), dtype=np.uint32)
        for i in range(n):
            for j in range(m):
                acc = np.uint64(0)
                for k in range(w):
                    acc += _popcount_u64(a[i, k] ^ b[j, k])
                out[i, j] = acc
        return out

    HAS_NUMBA = True
except ImportError:
    hamming_many_numba = None
    pairwise_hamming_numba = None
    HAS_NUMBA = False


if HAS_NUMBA:
    hamming_many = hamming_many_numba
    pairwise_hamming = pairwise_hamming_numba
    BACKEND = "numba"
else:
    hamming_many = hamming_many_numpy
    pairwise_hamming = pairwise_hamming_numpy
    BACKEND = "numpy"
