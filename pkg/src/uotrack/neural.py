"""Dense-math kernels for reference-guided feature enhancement and the heads.

Feature maps are ``(C, H, W)`` float arrays; token sequences are ``(N, C)``.
Everything here is a forward pass over explicit parameters; nothing is
trained.

Seeded parameters come from ``numpy.random.Generator(PCG64(seed))``. Weights
are drawn in a fixed order (query, key, value, output projections, then each
MLP layer's weight followed by its bias) from ``N(0, 1/fan_in)``, so a seed
pins every value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .geometry import BinaryMask, Box

LN_EPS = 1e-5


@dataclass
class Mlp:
    """Stack of affine layers with ReLU between them (none after the last).

    Weights are stored ``(in_dim, out_dim)`` so a row vector maps as ``x @ W + b``.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self) -> None:
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and w.shape[0] != self.layers[i - 1][0].shape[1]:
                raise ValueError(f"layer {i} input dim {w.shape[0]} != previous output dim")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"MLP expects input dim {self.in_dim}, got {x.shape[-1]}")
        for i, (w, b) in enumerate(self.layers):
            x = x @ w + b
            if i < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
        return x


@dataclass
class AttentionParams:
    """Single-head cross-attention projections plus the MLP of the update block."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp: Mlp

    def __post_init__(self) -> None:
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if self.mlp.in_dim != d or self.mlp.out_dim != d:
            raise ValueError("MLP must map model dim to model dim")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]


def _normal(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    return rng.standard_normal(shape) / np.sqrt(fan_in)


def init_mlp(dims: Sequence[int], seed: int) -> Mlp:
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = _normal(rng, d_in, (d_in, d_out))
        b = _normal(rng, d_in, (d_out,))
        layers.append((w, b))
    return Mlp(layers)


def init_attention_params(dim: int, hidden: int, seed: int, zero_update: bool = False) -> AttentionParams:
    """Seeded parameters; ``zero_update`` zeroes the output projection and last MLP layer."""
    rng = np.random.Generator(np.random.PCG64(seed))
    wq, wk, wv, wo = (_normal(rng, dim, (dim, dim)) for _ in range(4))
    w1, b1 = _normal(rng, dim, (dim, hidden)), _normal(rng, dim, (hidden,))
    w2, b2 = _normal(rng, hidden, (hidden, dim)), _normal(rng, hidden, (dim,))
    if zero_update:
        wo = np.zeros_like(wo)
        w2, b2 = np.zeros_like(w2), np.zeros_like(b2)
    return AttentionParams(wq, wk, wv, wo, Mlp([(w1, b1), (w2, b2)]))


def bilinear_sample(f: np.ndarray, y: float, x: float) -> np.ndarray:
    """Sample ``(C, H, W)`` at continuous index coordinates, clamped to the edge."""
    _, h, w = f.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    ly, lx = y - y0, x - x0
    return (
        f[:, y0, x0] * (1 - ly) * (1 - lx)
        + f[:, y0, x1] * (1 - ly) * lx
        + f[:, y1, x0] * ly * (1 - lx)
        + f[:, y1, x1] * ly * lx
    )


def roi_align(f: np.ndarray, box: Box, out_size: int = 7, spatial_scale: float = 1.0) -> np.ndarray:
    """One bilinear sample at the centre of each cell of an ``out_size`` grid over ``box``.

    The box is scaled into feature coordinates and clamped to the map. Feature
    pixel ``j`` has its centre at continuous coordinate ``j + 0.5``.
    """
    f = np.asarray(f, dtype=float)
    _, h, w = f.shape
    x1 = min(max(box.x1 * spatial_scale, 0.0), w)
    x2 = min(max(box.x2 * spatial_scale, 0.0), w)
    y1 = min(max(box.y1 * spatial_scale, 0.0), h)
    y2 = min(max(box.y2 * spatial_scale, 0.0), h)
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"box {box.as_xyxy()} has zero area inside the {h}x{w} feature map")
    cell_w = (x2 - x1) / out_size
    cell_h = (y2 - y1) / out_size
    out = np.empty((f.shape[0], out_size, out_size))
    for i in range(out_size):
        cy = y1 + (i + 0.5) * cell_h - 0.5
        for j in range(out_size):
            cx = x1 + (j + 0.5) * cell_w - 0.5
            out[:, i, j] = bilinear_sample(f, cy, cx)
    return out


def downsample(f: np.ndarray, out_size: int = 7) -> np.ndarray:
    """Adaptive average pooling: cell ``i`` averages rows ``floor(iH/S)`` to ``ceil((i+1)H/S)``."""
    f = np.asarray(f, dtype=float)
    c, h, w = f.shape
    out = np.empty((c, out_size, out_size))
    for i in range(out_size):
        r0, r1 = (i * h) // out_size, -((-(i + 1) * h) // out_size)
        for j in range(out_size):
            c0, c1 = (j * w) // out_size, -((-(j + 1) * w) // out_size)
            out[:, i, j] = f[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_weights(query_tokens: np.ndarray, kv_tokens: np.ndarray, p: AttentionParams) -> np.ndarray:
    q = np.asarray(query_tokens, dtype=float)
    kv = np.asarray(kv_tokens, dtype=float)
    if q.shape[-1] != p.dim or kv.shape[-1] != p.dim:
        raise ValueError(f"token dims {q.shape[-1]}, {kv.shape[-1]} do not match model dim {p.dim}")
    logits = (q @ p.wq) @ (kv @ p.wk).T / np.sqrt(p.dim)
    return softmax(logits, axis=-1)


def cross_attention(query_tokens: np.ndarray, kv_tokens: np.ndarray, p: AttentionParams) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d)) V`` followed by the output projection."""
    weights = attention_weights(query_tokens, kv_tokens, p)
    return (weights @ (np.asarray(kv_tokens, dtype=float) @ p.wv)) @ p.wo


def enhance_level(f: np.ndarray, ref_tokens: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Pre-norm cross-attention block with residuals around attention and MLP."""
    c, h, w = f.shape
    x = f.reshape(c, h * w).T
    u = x + cross_attention(layer_norm(x), layer_norm(ref_tokens), p)
    out = u + p.mlp(layer_norm(u))
    return out.T.reshape(c, h, w)


def rfe_enhance(
    pyramid: Sequence[np.ndarray],
    reference: Sequence[np.ndarray],
    tracked_boxes: Sequence[Box],
    mode: Literal["instance", "category"],
    p: AttentionParams,
    out_size: int = 7,
    base_stride: float = 1.0,
) -> list[np.ndarray]:
    """Enhance every pyramid level with appearance from the previous frame.

    Instance mode pools one ``out_size`` patch per tracked box from each
    reference level and concatenates them as key/value tokens; category
    mode pools the whole reference level instead. Level ``k`` (0-based) is
    assumed to have stride ``base_stride * 2**k`` relative to box coordinates.
    All levels share ``p``.
    """
    if len(pyramid) != len(reference):
        raise ValueError(f"pyramid has {len(pyramid)} levels, reference has {len(reference)}")
    if mode not in ("instance", "category"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "instance" and not tracked_boxes:
        raise ValueError("instance mode needs at least one tracked box")
    enhanced = []
    for k, (f, ref) in enumerate(zip(pyramid, reference)):
        f = np.asarray(f, dtype=float)
        ref = np.asarray(ref, dtype=float)
        if f.shape != ref.shape:
            raise ValueError(f"level {k}: shape {f.shape} != reference shape {ref.shape}")
        if f.shape[0] != p.dim:
            raise ValueError(f"level {k}: {f.shape[0]} channels, params expect {p.dim}")
        if mode == "instance":
            scale = 1.0 / (base_stride * 2**k)
            patches = [roi_align(ref, b, out_size, scale) for b in tracked_boxes]
        else:
            patches = [downsample(ref, out_size)]
        tokens = np.concatenate([patch.reshape(p.dim, -1).T for patch in patches], axis=0)
        enhanced.append(enhance_level(f, tokens, p))
    return enhanced


def identity_embedding(query: np.ndarray, roi_patch: np.ndarray, mlp: Mlp) -> np.ndarray:
    x = np.concatenate([np.ravel(query), np.ravel(roi_patch)])
    if x.size != mlp.in_dim:
        raise ValueError(f"concatenated input has {x.size} values, MLP expects {mlp.in_dim}")
    return mlp(x)


def cond_conv_mask(m: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """1x1 dynamic convolution: ``kernel[:C]`` weights the channels, ``kernel[C]`` is the bias."""
    m = np.asarray(m, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    c = m.shape[0]
    if kernel.shape != (c + 1,):
        raise ValueError(f"kernel must have {c + 1} entries for {c} channels, got {kernel.shape}")
    return (np.tensordot(kernel[:c], m, axes=(0, 0)) + kernel[c])[None]


def upsample_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize of a 2-D array."""
    x = np.asarray(x, dtype=float)
    h, w = x.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ly = (ys - y0)[:, None]
    lx = (xs - x0)[None, :]
    top = x[y0][:, x0] * (1 - lx) + x[y0][:, x1] * lx
    bottom = x[y1][:, x0] * (1 - lx) + x[y1][:, x1] * lx
    return top * (1 - ly) + bottom * ly


def mask_from_logits(logits: np.ndarray, height: int, width: int) -> BinaryMask:
    """Upsample a ``(1, h, w)`` or ``(h, w)`` logit map and threshold at zero."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim == 3:
        logits = logits[0]
    return BinaryMask(upsample_bilinear(logits, height, width) > 0.0)
