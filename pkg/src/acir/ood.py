"""Out-of-distribution gating via reconstruction residuals.

A query is flagged when its reconstruction residual exceeds
tau = mean + 3 * std of the residuals observed over the calibration
gallery (one-sided: poorly reconstructed means suspicious). Residuals are
either mean absolute error (grayscale) or 1 - MS-SSIM (RGB modality).

A second, hash-space rule flags codes that fall outside every class
centre's Hamming ball of radius floor(bits / 4) + 1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .codes import BinaryCode, hamming_distance
from .errors import FormatError, InsufficientDataError, ShapeError, TooSmallError

# Per-scale exponents of the classic 5-scale construction, normalized to sum 1.
_RAW_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MSSSIMParams:
    """Multi-scale structural similarity constants.

    ``weights`` double as the luminance/contrast/structure exponents per
    scale (luminance enters only at the coarsest scale).
    """

    weights: tuple = _RAW_SCALE_WEIGHTS
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        total = float(sum(self.weights))
        object.__setattr__(
            self, "weights", tuple(float(w) / total for w in self.weights)
        )

    @property
    def scales(self) -> int:
        return len(self.weights)


DEFAULT_MSSSIM_PARAMS = MSSSIMParams()


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return g / g.sum()


def _blur_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    r = window.shape[0] // 2
    t = correlate1d(img, window, axis=0, mode="constant")
    t = correlate1d(t, window, axis=1, mode="constant")
    return t[r:-r, r:-r]


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    img = img[:h, :w]
    return (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / 4.0


def _ms_ssim_single(x, y, p: MSSSIMParams) -> float:
    window = _gaussian_window(p.window_size, p.sigma)
    c1 = (p.k1 * p.data_range) ** 2
    c2 = (p.k2 * p.data_range) ** 2
    c3 = c2 / 2.0

    value = 1.0
    for scale in range(p.scales):
        mu_x = _blur_valid(x, window)
        mu_y = _blur_valid(y, window)
        var_x = np.maximum(_blur_valid(x * x, window) - mu_x * mu_x, 0.0)
        var_y = np.maximum(_blur_valid(y * y, window) - mu_y * mu_y, 0.0)
        cov = _blur_valid(x * y, window) - mu_x * mu_y
        sd_x = np.sqrt(var_x)
        sd_y = np.sqrt(var_y)

        contrast = float(np.mean((2.0 * sd_x * sd_y + c2) / (var_x + var_y + c2)))
        structure = float(np.mean((cov + c3) / (sd_x * sd_y + c3)))
        weight = p.weights[scale]
        value *= max(contrast, 1e-12) ** weight * max(structure, 1e-12) ** weight
        if scale == p.scales - 1:
            luminance = float(
                np.mean((2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1))
            )
            value *= max(luminance, 1e-12) ** weight
        else:
            x = _halve(x)
            y = _halve(y)
    return min(value, 1.0)


def ms_ssim(x, y, params: MSSSIMParams = DEFAULT_MSSSIM_PARAMS) -> float:
    """Multi-scale structural similarity in (0, 1]; 1 iff the images match.

    Contrast and structure enter at every scale of the dyadic pyramid,
    luminance only at the coarsest. Multi-channel images are averaged over
    channels. Raises TooSmallError when the pyramid would exhaust the image
    (sides must reach window_size * 2**(scales-1)).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    elif x.ndim != 3:
        raise ShapeError(f"expected (H, W) or (H, W, C) images, got {x.shape}")
    needed = params.window_size * 2 ** (params.scales - 1)
    if min(x.shape[0], x.shape[1]) < needed:
        raise TooSmallError(
            f"sides must be >= {needed} for {params.scales} scales, "
            f"got {x.shape[0]}x{x.shape[1]}"
        )
    values = [
        _ms_ssim_single(x[:, :, c], y[:, :, c], params) for c in range(x.shape[2])
    ]
    return float(np.mean(values))


class ResidualKind(str, enum.Enum):
    """How a reconstruction is scored against its source image."""

    L1 = "l1"
    ONE_MINUS_MSSSIM = "msssim"


def reconstruction_residual(
    image,
    reconstruction,
    kind: ResidualKind = ResidualKind.L1,
    params: MSSSIMParams = DEFAULT_MSSSIM_PARAMS,
) -> float:
    """Nonnegative disparity between an image and its reconstruction."""
    x = np.asarray(image, dtype=np.float64)
    r = np.asarray(reconstruction, dtype=np.float64)
    if x.shape != r.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {r.shape}")
    if ResidualKind(kind) is ResidualKind.L1:
        return float(np.mean(np.abs(x - r)))
    return 1.0 - ms_ssim(x, r, params)


@dataclass(frozen=True)
class OODCalibration:
    """Residual statistics and the one-sided decision threshold tau = mu + 3*delta."""

    metric: ResidualKind
    mu: float
    delta: float
    tau: float
    count: int


def calibrate_threshold(residuals, metric: ResidualKind = ResidualKind.L1) -> OODCalibration:
    """Fit tau = mean + 3 * population std over in-distribution residuals."""
    values = np.asarray(residuals, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise InsufficientDataError("calibration needs at least two residuals")
    if not np.all(np.isfinite(values)) or np.any(values < 0.0):
        raise ValueError("residuals must be finite and nonnegative")
    mu = float(values.mean())
    delta = float(values.std())
    return OODCalibration(
        metric=ResidualKind(metric), mu=mu, delta=delta, tau=mu + 3.0 * delta,
        count=int(values.size),
    )


def is_ood(residual: float, calibration: OODCalibration) -> bool:
    """Strictly above the threshold counts as out-of-distribution."""
    return residual > calibration.tau


def hamming_ball_radius(nbits: int) -> int:
    """In-distribution ball radius around a hash centre: floor(bits/4) + 1."""
    return nbits // 4 + 1


def hash_space_ood(code: BinaryCode, centres) -> bool:
    """True iff the code lies outside every class centre's Hamming ball.

    Adding a centre can only ever flip the verdict from True to False.
    """
    centre_codes = list(centres.values()) if isinstance(centres, dict) else list(centres)
    if not centre_codes:
        raise ValueError("need at least one hash centre")
    radius = hamming_ball_radius(code.nbits)
    nearest = min(hamming_distance(code, c) for c in centre_codes)
    return nearest > radius


# -- calibration file (key=value lines) ----------------------------------------


def save_calibration(path, calibration: OODCalibration) -> None:
    lines = [
        f"metric={calibration.metric.value}",
        f"mu={calibration.mu!r}",
        f"delta={calibration.delta!r}",
        f"tau={calibration.tau!r}",
        f"count={calibration.count}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_calibration(path) -> OODCalibration:
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: bad calibration line {line!r}")
        key, value = line.split("=", 1)
        fields[key] = value
    try:
        return OODCalibration(
            metric=ResidualKind(fields["metric"]),
            mu=float(fields["mu"]),
            delta=float(fields["delta"]),
            tau=float(fields["tau"]),
            count=int(fields["count"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: invalid calibration file") from exc
