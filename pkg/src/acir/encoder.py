"""Forward-only toy encoder: seeded deterministic weights, no training.

The pipeline mirrors the retrieval network at desk scale: a strided conv
stem exposes per-level embeddings, windowed multi-head self-attention
refines the shallow and deep maps, a cross-level fusion block lets pooled
shallow tokens steer the deep representation, pixel tokens plus a cls token
run through two MSA layers, and a Kolmogorov-Arnold layer squashed by tanh
emits the hash embedding. A small decoder reconstructs the input from the
deep map for residual-based out-of-distribution scoring.

Everything here is a pure function of the (immutable, seeded) weights, so
concurrent evaluation over images is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .pairing import to_luma
from .tensorio import read_tensor, write_tensor

DECODER_UPSAMPLE_FACTORS = (2, 4, 4)
STEM_CHANNELS = (16, 32, 64, 128)
WEIGHT_INIT_SCALE = 0.05


# -- small numeric helpers -----------------------------------------------------


def leaky_relu(x, slope: float = 0.01):
    return np.where(x >= 0.0, x, slope * x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def silu(x):
    return x * sigmoid(x)


def softmax(x, axis: int = -1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0):
    """Plain 2-D convolution: (C_in, H, W) x (C_out, C_in, kh, kw)."""
    c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv expects {c_in_w} input channels, got {c_in}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    out = np.einsum("chwij,ocij->ohw", windows, weight, optimize=True)
    if bias is not None:
        out += bias[:, None, None]
    return out


def instance_norm(x, eps: float = 1e-5):
    mean = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def upsample_nearest(x, factor: int):
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)


def adaptive_avg_pool(x, out_hw):
    """Channel-wise average pooling onto an (oh, ow) grid of near-equal bins."""
    c, h, w = x.shape
    oh, ow = out_hw
    out = np.empty((c, oh, ow), dtype=x.dtype)
    for i in range(oh):
        r0, r1 = (i * h) // oh, -(-(i + 1) * h // oh)
        for j in range(ow):
            c0, c1 = (j * w) // ow, -(-(j + 1) * w // ow)
            out[:, i, j] = x[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out


def bilinear_resize(x, out_hw):
    """Channel-wise bilinear resampling with half-pixel centre alignment."""
    c, h, w = x.shape
    oh, ow = out_hw
    ys = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = x[:, y0][:, :, x0] * (1 - wx) + x[:, y0][:, :, x1] * wx
    bot = x[:, y1][:, :, x0] * (1 - wx) + x[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def global_avg_pool(x):
    return x.mean(axis=(1, 2))


def sinusoidal_positional_embedding(n_tokens: int, dim: int) -> np.ndarray:
    """Deterministic sin/cos table, token index 0 included."""
    positions = np.arange(n_tokens)[:, None]
    freqs = np.exp(-np.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)
    angles = positions * freqs[None, :]
    pe = np.empty((n_tokens, dim))
    pe[:, 0::2] = np.sin(angles[:, 0::2])
    pe[:, 1::2] = np.cos(angles[:, 1::2])
    return pe


# -- tokenization and attention blocks -----------------------------------------


@dataclass(frozen=True)
class TokenSequence:
    """(1 + H*W) x C rows, cls token first, positional embedding added."""

    tokens: np.ndarray
    pe: np.ndarray


def tokenize_with_pe(feature_map, cls_token) -> TokenSequence:
    """Flatten each pixel to a token, prepend the cls token, add PE."""
    c, h, w = feature_map.shape
    cls_token = np.asarray(cls_token, dtype=np.float64)
    if cls_token.shape != (c,):
        raise ShapeError(f"cls token must have {c} channels, got {cls_token.shape}")
    pixels = feature_map.reshape(c, h * w).T
    raw = np.vstack([cls_token[None, :], pixels])
    pe = sinusoidal_positional_embedding(raw.shape[0], c)
    return TokenSequence(tokens=raw + pe, pe=pe)


def msa_forward(tokens, wq, wk, wv, n_heads: int, return_attention: bool = False):
    """Multi-head self-attention over a token sequence (no residual path)."""
    t, d = tokens.shape
    if d % n_heads:
        raise ShapeError(f"dim {d} not divisible by {n_heads} heads")
    head_dim = d // n_heads

    def split(m):
        return (tokens @ m).reshape(t, n_heads, head_dim).transpose(1, 0, 2)

    q, k, v = split(wq), split(wk), split(wv)
    attn = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(head_dim), axis=-1)
    out = (attn @ v).transpose(1, 0, 2).reshape(t, d)
    if return_attention:
        return out, attn
    return out


@dataclass(frozen=True)
class ConvMSAConfig:
    """Windowed attention over a conv feature map.

    1x1-conv projections (channel matmuls) produce Q/K/V inside each
    non-overlapping window; channels = n_heads * head_dim.
    """

    window: tuple[int, int]
    n_heads: int
    head_dim: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray


def conv_msa_forward(feature_map, cfg: ConvMSAConfig, return_attention: bool = False):
    """Per-window multi-head attention; output has the input's exact shape."""
    c, h, w = feature_map.shape
    ph, pw = cfg.window
    if c != cfg.n_heads * cfg.head_dim:
        raise ShapeError(
            f"channels {c} != n_heads {cfg.n_heads} * head_dim {cfg.head_dim}"
        )
    if h % ph or w % pw:
        raise ShapeError(f"map {h}x{w} not divisible by window {ph}x{pw}")
    nh, nw = h // ph, w // pw
    t = ph * pw

    # (C, H, W) -> (n_windows, T, C) token blocks
    blocks = (
        feature_map.reshape(c, nh, ph, nw, pw)
        .transpose(1, 3, 2, 4, 0)
        .reshape(nh * nw, t, c)
    )

    def split(m):
        proj = blocks @ m
        return proj.reshape(nh * nw, t, cfg.n_heads, cfg.head_dim).transpose(0, 2, 1, 3)

    q, k, v = split(cfg.wq), split(cfg.wk), split(cfg.wv)
    attn = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(cfg.head_dim), axis=-1)
    mixed = (attn @ v).transpose(0, 2, 1, 3).reshape(nh * nw, t, c)

    out = (
        mixed.reshape(nh, nw, ph, pw, c)
        .transpose(4, 0, 2, 1, 3)
        .reshape(c, h, w)
    )
    if return_attention:
        return out, attn
    return out


@dataclass(frozen=True)
class FusionWeights:
    """Cross-level attention: queries from the (interpolated) deep map,
    keys from the (pooled) shallow map, values are the raw pooled shallow
    tokens; the result is projected to the deep channel count."""

    wq: np.ndarray  # (C_deep, attn_dim)
    wk: np.ndarray  # (C_shallow, attn_dim)
    wo: np.ndarray  # (C_shallow, C_deep)
    pooled_size: int = 7


def cross_level_fuse(shallow, deep, weights: FusionWeights, return_details: bool = False):
    """Fuse shallow and deep maps into one vector of deep channel count."""
    cs = shallow.shape[0]
    cd = deep.shape[0]
    if weights.wq.shape[0] != cd or weights.wk.shape[0] != cs:
        raise ShapeError("fusion projection shapes do not match the feature maps")
    if weights.wq.shape[1] != weights.wk.shape[1]:
        raise ShapeError("query and key projections disagree on attention dim")
    p = weights.pooled_size
    s_tokens = adaptive_avg_pool(shallow, (p, p)).reshape(cs, p * p).T
    d_tokens = bilinear_resize(deep, (p, p)).reshape(cd, p * p).T
    q = d_tokens @ weights.wq
    k = s_tokens @ weights.wk
    attn = softmax(q @ k.T / np.sqrt(weights.wq.shape[1]), axis=1)
    fused_tokens = attn @ s_tokens
    vector = (fused_tokens @ weights.wo).mean(axis=0)
    if return_details:
        return vector, fused_tokens, attn
    return vector


# -- Kolmogorov-Arnold layer ----------------------------------------------------


def bspline_basis(x, grid_size: int, degree: int = 3) -> np.ndarray:
    """Cox-de Boor evaluation of the (grid_size + degree) cubic B-spline
    basis functions on a uniform grid over [-1, 1]. Inputs are assumed to
    lie inside the domain; the last interval is closed at x = 1."""
    x = np.asarray(x, dtype=np.float64)
    step = 2.0 / grid_size
    knots = -1.0 + step * np.arange(-degree, grid_size + degree + 1)
    n0 = knots.shape[0] - 1
    xe = x[:, None]
    basis = ((knots[:n0] <= xe) & (xe < knots[1 : n0 + 1])).astype(np.float64)
    # close the right end of the domain so x = 1 lands in the last interval
    basis[:, grid_size + degree - 1] = np.where(
        x == 1.0, 1.0, basis[:, grid_size + degree - 1]
    )
    for k in range(1, degree + 1):
        n_k = n0 - k
        left = (xe - knots[:n_k]) / (knots[k : k + n_k] - knots[:n_k])
        right = (knots[k + 1 : k + 1 + n_k] - xe) / (
            knots[k + 1 : k + 1 + n_k] - knots[1 : 1 + n_k]
        )
        basis = left * basis[:, :n_k] + right * basis[:, 1 : 1 + n_k]
    return basis


@dataclass(frozen=True)
class KANLayer:
    """Learnable activation per edge: phi(x) = w_b * silu(x) + w_s * spline(x).

    spline(x) is a cubic B-spline over a uniform grid on [-1, 1] with
    per-edge coefficients; out-of-domain inputs are clamped.
    """

    base_weight: np.ndarray  # (C_in, C_out)
    spline_weight: np.ndarray  # (C_in, C_out)
    spline_coef: np.ndarray  # (C_in, C_out, grid_size + 3)
    grid_size: int = 8

    def forward(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
        c_in, c_out = self.base_weight.shape
        if x.shape != (c_in,):
            raise ShapeError(f"expected {c_in} inputs, got {x.shape}")
        bases = bspline_basis(x, self.grid_size)
        spline_val = np.einsum("pqm,pm->pq", self.spline_coef, bases)
        phi = self.base_weight * silu(x)[:, None] + self.spline_weight * spline_val
        return phi.sum(axis=0)


# -- decoder ---------------------------------------------------------------------


@dataclass(frozen=True)
class DecoderWeights:
    """Three conv/instance-norm/LeakyReLU blocks with nearest upsampling by
    (2, 4, 4), then a 1x1 conv + sigmoid to one channel in [0, 1]."""

    blocks: tuple  # ((weight, bias), ...) aligned with DECODER_UPSAMPLE_FACTORS
    final_weight: np.ndarray
    final_bias: np.ndarray


def decoder_forward(deep, weights: DecoderWeights) -> np.ndarray:
    x = np.asarray(deep, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"decoder expects (C, h, w), got {x.shape}")
    for (w, b), factor in zip(weights.blocks, DECODER_UPSAMPLE_FACTORS):
        x = conv2d(x, w, b, stride=1, padding=1)
        x = leaky_relu(instance_norm(x))
        x = upsample_nearest(x, factor)
    x = conv2d(x, weights.final_weight, weights.final_bias)
    return sigmoid(x)


# -- the full toy encoder ---------------------------------------------------------


@dataclass(frozen=True)
class EncodeResult:
    levels: list  # per-stem-block pooled vectors, dims = STEM_CHANNELS
    embedding: np.ndarray  # (nbits,), strictly inside (-1, 1)


def _largest_divisor_at_most(n: int, cap: int) -> int:
    for d in range(min(cap, n), 0, -1):
        if n % d == 0:
            return d
    return 1


class ToyEncoder:
    """Deterministic seeded weights; forward passes only.

    Image side must equal ``image_size`` (divisible by 32). Grayscale
    input is replicated to three channels.
    """

    def __init__(self, nbits: int = 64, seed: int = 0, image_size: int = 224):
        if image_size % 32 or image_size < 32:
            raise ShapeError(f"image size must be a positive multiple of 32, got {image_size}")
        self.nbits = nbits
        self.seed = seed
        self.image_size = image_size
        rng = np.random.default_rng(seed)

        def u(*shape):
            return rng.uniform(-WEIGHT_INIT_SCALE, WEIGHT_INIT_SCALE, shape)

        chans = (3,) + STEM_CHANNELS
        self.stem = [
            (u(c_out, c_in, 3, 3), u(c_out)) for c_in, c_out in zip(chans, chans[1:])
        ]

        shallow_side = image_size // 4
        deep_side = image_size // 16
        c_sh, c_dp = STEM_CHANNELS[1], STEM_CHANNELS[3]
        ws = _largest_divisor_at_most(shallow_side, 8)
        wd = _largest_divisor_at_most(deep_side, 7)
        self.shallow_attn = ConvMSAConfig(
            window=(ws, ws), n_heads=2, head_dim=c_sh // 2,
            wq=u(c_sh, c_sh), wk=u(c_sh, c_sh), wv=u(c_sh, c_sh),
        )
        self.deep_attn = ConvMSAConfig(
            window=(wd, wd), n_heads=4, head_dim=c_dp // 4,
            wq=u(c_dp, c_dp), wk=u(c_dp, c_dp), wv=u(c_dp, c_dp),
        )
        self.fusion = FusionWeights(wq=u(c_dp, 32), wk=u(c_sh, 32), wo=u(c_sh, c_dp))
        self.cls_token = u(c_dp)
        self.msa_layers = [(u(c_dp, c_dp), u(c_dp, c_dp), u(c_dp, c_dp)) for _ in range(2)]
        self.kan = KANLayer(
            base_weight=u(2 * c_dp, nbits),
            spline_weight=u(2 * c_dp, nbits),
            spline_coef=u(2 * c_dp, nbits, 8 + 3),
        )
        dec_chans = (c_dp, 64, 32, 16)
        self.decoder = DecoderWeights(
            blocks=tuple(
                (u(c_out, c_in, 3, 3), u(c_out))
                for c_in, c_out in zip(dec_chans, dec_chans[1:])
            ),
            final_weight=u(1, dec_chans[-1], 1, 1),
            final_bias=u(1),
        )

    def _prepare(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2:
            x = np.repeat(image[None, :, :], 3, axis=0)
        elif image.ndim == 3 and image.shape[2] == 3:
            x = image.transpose(2, 0, 1)
        else:
            raise ShapeError(f"expected (H, W) or (H, W, 3) image, got {image.shape}")
        if x.shape[1] != self.image_size or x.shape[2] != self.image_size:
            raise ShapeError(
                f"encoder built for {self.image_size}x{self.image_size}, "
                f"got {x.shape[1]}x{x.shape[2]}"
            )
        return x

    def _stem_maps(self, image):
        x = self._prepare(image)
        maps = []
        for w, b in self.stem:
            x = leaky_relu(conv2d(x, w, b, stride=2, padding=1))
            maps.append(x)
        return maps

    def encode(self, image) -> EncodeResult:
        maps = self._stem_maps(image)
        levels = [global_avg_pool(m) for m in maps]
        shallow = conv_msa_forward(maps[1], self.shallow_attn)
        deep = conv_msa_forward(maps[3], self.deep_attn)
        fused = cross_level_fuse(shallow, deep, self.fusion)
        tokens = tokenize_with_pe(deep, self.cls_token).tokens
        for wq, wk, wv in self.msa_layers:
            tokens = msa_forward(tokens, wq, wk, wv, n_heads=4)
        features = np.concatenate([fused, tokens[0]])
        embedding = np.tanh(self.kan.forward(features))
        return EncodeResult(levels=levels, embedding=embedding)

    def reconstruct(self, image) -> np.ndarray:
        """Decode the deep stem map back to a grayscale image in [0, 1]."""
        deep = self._stem_maps(image)[3]
        side = self.image_size // 32
        pooled = adaptive_avg_pool(deep, (side, side))
        return decoder_forward(pooled, self.decoder)[0]

    # -- weight serialization (test fixtures) --

    def weights_state(self) -> dict:
        state = {}
        for i, (w, b) in enumerate(self.stem):
            state[f"stem.{i}.weight"], state[f"stem.{i}.bias"] = w, b
        for name, cfg in (("shallow_attn", self.shallow_attn), ("deep_attn", self.deep_attn)):
            state[f"{name}.wq"], state[f"{name}.wk"], state[f"{name}.wv"] = cfg.wq, cfg.wk, cfg.wv
        state["fusion.wq"], state["fusion.wk"], state["fusion.wo"] = (
            self.fusion.wq, self.fusion.wk, self.fusion.wo,
        )
        state["cls_token"] = self.cls_token
        for i, (wq, wk, wv) in enumerate(self.msa_layers):
            state[f"msa.{i}.wq"], state[f"msa.{i}.wk"], state[f"msa.{i}.wv"] = wq, wk, wv
        state["kan.base_weight"] = self.kan.base_weight
        state["kan.spline_weight"] = self.kan.spline_weight
        state["kan.spline_coef"] = self.kan.spline_coef
        for i, (w, b) in enumerate(self.decoder.blocks):
            state[f"decoder.{i}.weight"], state[f"decoder.{i}.bias"] = w, b
        state["decoder.final.weight"] = self.decoder.final_weight
        state["decoder.final.bias"] = self.decoder.final_bias
        return state

    def save_weights(self, directory) -> None:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, array in self.weights_state().items():
            write_tensor(directory / f"{name}.acirt", array)

    def load_weights(self, directory) -> None:
        from pathlib import Path

        directory = Path(directory)
        current = self.weights_state()
        for name, array in current.items():
            loaded = read_tensor(directory / f"{name}.acirt").astype(np.float64)
            if loaded.shape != array.shape:
                raise ShapeError(f"{name}: shape {loaded.shape} != {array.shape}")
            array[...] = loaded
