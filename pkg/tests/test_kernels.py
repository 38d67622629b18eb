"""The numba and numpy Hamming backends must agree exactly."""

import numpy as np
import pytest

from acir import _kernels


@pytest.fixture
def packed(rng):
    return rng.integers(0, 2**63, size=(200, 2), dtype=np.int64).astype(np.uint64)


def test_numpy_backend_matches_bit_level(rng, packed):
    query = packed[0]
    dists = _kernels.hamming_many_numpy(query, packed)
    raw_q = np.unpackbits(query.view(np.uint8))
    for i, row in enumerate(packed):
        raw_r = np.unpackbits(row.view(np.uint8))
        assert dists[i] == np.sum(raw_q != raw_r)


@pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba backend unavailable")
def test_backends_agree_one_to_many(rng, packed):
    query = packed[7]
    np.testing.assert_array_equal(
        _kernels.hamming_many_numba(query, packed),
        _kernels.hamming_many_numpy(query, packed),
    )


@pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba backend unavailable")
def test_backends_agree_pairwise(rng, packed):
    a, b = packed[:50], packed[50:120]
    np.testing.assert_array_equal(
        _kernels.pairwise_hamming_numba(a, b),
        _kernels.pairwise_hamming_numpy(a, b),
    )


def test_dispatcher_points_at_active_backend():
    if _kernels.HAS_NUMBA:
        assert _kernels.BACKEND == "numba"
        assert _kernels.hamming_many is _kernels.hamming_many_numba
    else:
        assert _kernels.BACKEND == "numpy"
        assert _kernels.hamming_many is _kernels.hamming_many_numpy


def test_env_flag_forces_numpy_backend():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from acir import _kernels; print(_kernels.BACKEND)"],
        env={"PATH": "/usr/bin:/bin", "ACIR_NO_NUMBA": "1"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "numpy"
