import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_code_bits(rng, nbits):
    return rng.integers(0, 2, size=nbits).astype(np.uint8)


def smooth_image(rng, side, blur=6.0):
    """Structured random field: filtered white noise rescaled to [0, 1]."""
    from scipy.ndimage import gaussian_filter

    field = gaussian_filter(rng.normal(size=(side, side)), blur)
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo)


def embedding_with_correlation(rng, query, target):
    """A vector whose Pearson correlation with ``query`` is ``target``."""
    q = np.asarray(query, dtype=np.float64)
    qc = q - q.mean()
    qn = qc / np.linalg.norm(qc)
    noise = rng.normal(size=q.shape)
    noise -= noise.mean()
    noise -= np.dot(noise, qn) * qn
    noise /= np.linalg.norm(noise)
    return target * qn + np.sqrt(max(1.0 - target * target, 0.0)) * noise
