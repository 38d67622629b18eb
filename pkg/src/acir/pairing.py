"""Structure-aware pairing signals.

Low-resolution grayscale fingerprints measure whether two same-class images
actually look alike. The consistency score between two fingerprints is
zero-mean normalized cross-correlation mapped to [0, 1]; it weights the
attractive term of the contrastive objective, so visually dissimilar
same-class pairs ("neutral" pairs) are pulled together less aggressively.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import BadRangeError, ShapeError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

DEFAULT_FINGERPRINT_SIZE = 32
DEFAULT_NEUTRAL_THRESHOLD = 0.5


class PairClass(enum.IntEnum):
    NEGATIVE = -1
    NEUTRAL = 0
    POSITIVE = 1


def to_luma(image: np.ndarray) -> np.ndarray:
    """RGB (H, W, 3) to grayscale (H, W); grayscale passes through."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return image @ LUMA_WEIGHTS
    if image.ndim == 3 and image.shape[2] == 1:
        return image[:, :, 0]
    raise ShapeError(f"expected (H, W) or (H, W, 3) image, got {image.shape}")


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Rows map output cells to weighted input spans (true area averaging).

    Each row sums to 1; for n_in divisible by n_out this is an exact block
    mean.
    """
    scale = n_in / n_out
    weights = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        first = int(np.floor(lo))
        last = int(np.ceil(hi))
        for j in range(first, min(last, n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap / scale
    return weights


def make_fingerprint(image, size: int = DEFAULT_FINGERPRINT_SIZE) -> np.ndarray:
    """Luma-convert and area-average downsample an image to (size, size).

    Pixels must lie in [0, 1] (BadRangeError otherwise) and both image
    sides must be at least ``size``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ShapeError("empty image")
    if float(image.min()) < 0.0 or float(image.max()) > 1.0:
        raise BadRangeError("pixel values must lie in [0, 1]")
    gray = to_luma(image)
    h, w = gray.shape
    if h < size or w < size:
        raise ShapeError(f"image {h}x{w} smaller than fingerprint size {size}")
    fp = _area_weights(h, size) @ gray @ _area_weights(w, size).T
    return np.clip(fp, 0.0, 1.0)


def structural_consistency(a: np.ndarray, b: np.ndarray) -> float:
    """Consistency of two fingerprints in [0, 1]: (1 + ZNCC) / 2.

    1 for identical non-constant fingerprints, 0 for a contrast inversion.
    If either fingerprint is constant the correlation is undefined; falls
    back to an intensity test (1 if the means agree to 1e-6, else an
    uninformative 0.5).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"fingerprint shapes differ: {a.shape} vs {b.shape}")
    ca = a - a.mean()
    cb = b - b.mean()
    na = np.linalg.norm(ca)
    nb = np.linalg.norm(cb)
    if na == 0.0 or nb == 0.0:
        return 1.0 if abs(float(a.mean()) - float(b.mean())) < 1e-6 else 0.5
    zncc = float(np.clip(np.dot(ca.ravel(), cb.ravel()) / (na * nb), -1.0, 1.0))
    return (1.0 + zncc) / 2.0


def consistency_matrix(fingerprints) -> np.ndarray:
    """Symmetric B x B consistency matrix with unit diagonal."""
    n = len(fingerprints)
    out = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = structural_consistency(
                fingerprints[i], fingerprints[j]
            )
    return out


def semantic_similarity_matrix(labels) -> np.ndarray:
    """s_ij = 1 iff labels agree; symmetric with unit diagonal."""
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(np.int8)


def classify_pairs(
    semantic: np.ndarray,
    consistency: np.ndarray,
    threshold: float = DEFAULT_NEUTRAL_THRESHOLD,
) -> np.ndarray:
    """Pair taxonomy: Negative across classes, Positive within class when the
    consistency clears the threshold, Neutral otherwise. The diagonal is
    Positive. Changing the threshold only ever moves pairs between Positive
    and Neutral."""
    semantic = np.asarray(semantic)
    consistency = np.asarray(consistency, dtype=np.float64)
    if semantic.shape != consistency.shape:
        raise ShapeError(
            f"matrix shapes differ: {semantic.shape} vs {consistency.shape}"
        )
    out = np.full(semantic.shape, PairClass.NEGATIVE, dtype=np.int8)
    same = semantic != 0
    out[same & (consistency >= threshold)] = PairClass.POSITIVE
    out[same & (consistency < threshold)] = PairClass.NEUTRAL
    np.fill_diagonal(out, PairClass.POSITIVE)
    return out
