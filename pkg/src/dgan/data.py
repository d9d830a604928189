"""Synthetic ellipse dataset with known content and style factors.

Each image is one anti-aliased filled ellipse on a solid background.
Content is geometry: center, rotation, axis ratio. Style is color: a
foreground and a background hue, drawn from bands that are disjoint
between the two domains. Because the factors are known exactly, probes
can measure whether a trained model moves geometry when content codes
change and color when style codes change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ValidationError
from .seeds import make_rng
from .tensor import Tensor

# hue bands per domain, disjoint by construction
FG_HUE_BANDS = ((0.02, 0.22), (0.52, 0.72))
BG_HUE_BANDS = ((0.30, 0.45), (0.80, 0.95))
MAJOR_RADIUS = 0.20


@dataclass
class SynthSpec:
    resolution: int = 32
    n_images: int = 256
    seed: int = 0
    single_domain: int | None = None  # None: uniform over {0, 1}

    def __post_init__(self):
        if self.resolution < 8:
            raise ContractError(f"resolution must be >= 8, got {self.resolution}")
        if self.n_images < 1:
            raise ValidationError(f"n_images must be positive, got {self.n_images}")
        if self.single_domain is not None and self.single_domain not in (0, 1):
            raise ValidationError(f"single_domain must be 0 or 1, got {self.single_domain}")


@dataclass
class FactorTable:
    """Ground truth per image; centers in fractional [0,1] coordinates."""

    center_x: np.ndarray
    center_y: np.ndarray
    rotation: np.ndarray
    axis_ratio: np.ndarray
    fg_hue: np.ndarray
    bg_hue: np.ndarray
    domain: np.ndarray


def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Vectorized HSV -> RGB, all inputs in [0,1], output (..., 3)."""
    scalar = np.ndim(h) == 0
    h = np.atleast_1d(np.asarray(h, dtype=np.float64)) % 1.0
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), h.shape)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), h.shape)
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    out = np.empty(h.shape + (3,))
    for idx, (r, g, b) in enumerate(((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))):
        mask = i == idx
        out[mask, 0] = r[mask]
        out[mask, 1] = g[mask]
        out[mask, 2] = b[mask]
    return out[0] if scalar else out


def rgb_to_hue(rgb: np.ndarray) -> np.ndarray:
    """Hue channel of (..., 3) RGB values, in [0,1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn
    hue = np.zeros_like(mx)
    safe = delta > 1e-12
    rmax = safe & (mx == r)
    gmax = safe & (mx == g) & ~rmax
    bmax = safe & ~rmax & ~gmax
    hue[rmax] = ((g - b)[rmax] / delta[rmax]) % 6.0
    hue[gmax] = (b - r)[gmax] / delta[gmax] + 2.0
    hue[bmax] = (r - g)[bmax] / delta[bmax] + 4.0
    return hue / 6.0


def _render_ellipse(res, cx, cy, theta, ratio, fg_rgb, bg_rgb):
    ys, xs = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    # pixel centers in fractional coordinates
    fx = (xs + 0.5) / res
    fy = (ys + 0.5) / res
    dx, dy = fx - cx, fy - cy
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    a = MAJOR_RADIUS
    b = MAJOR_RADIUS * ratio
    r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    # approximate signed distance to the boundary, smoothed over ~1.5 px
    dist = (r - 1.0) * min(a, b)
    soft = 1.5 / res
    coverage = np.clip(0.5 - dist / soft, 0.0, 1.0)
    img = coverage[None] * fg_rgb.reshape(3, 1, 1) + (1.0 - coverage[None]) * bg_rgb.reshape(3, 1, 1)
    return img


def synth_dataset(spec: SynthSpec) -> tuple[Tensor, FactorTable]:
    """Render the dataset and its ground-truth factor table."""
    rng = make_rng(spec.seed, "synth")
    n, res = spec.n_images, spec.resolution
    if spec.single_domain is None:
        domain = rng.integers(0, 2, n)
    else:
        domain = np.full(n, spec.single_domain)
    cx = rng.uniform(0.25, 0.75, n)
    cy = rng.uniform(0.25, 0.75, n)
    rot = rng.uniform(0.0, np.pi, n)
    ratio = rng.uniform(0.45, 0.85, n)
    fg_hue = np.array([rng.uniform(*FG_HUE_BANDS[d]) for d in domain])
    bg_hue = np.array([rng.uniform(*BG_HUE_BANDS[d]) for d in domain])

    images = np.empty((n, 3, res, res))
    for i in range(n):
        fg = hsv_to_rgb(fg_hue[i], 0.85, 0.95)
        bg = hsv_to_rgb(bg_hue[i], 0.55, 0.55)
        images[i] = _render_ellipse(res, cx[i], cy[i], rot[i], ratio[i], fg, bg)
    table = FactorTable(
        center_x=cx, center_y=cy, rotation=rot, axis_ratio=ratio,
        fg_hue=fg_hue, bg_hue=bg_hue, domain=domain,
    )
    return Tensor(images), table


# -- probes on rendered or generated images ---------------------------------


def _foreground_weights(img: np.ndarray) -> np.ndarray:
    """Soft foreground mask: distance from the border-median color."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"probe expects a 3,H,W image, got {img.shape}")
    border = np.concatenate(
        [img[:, 0, :], img[:, -1, :], img[:, :, 0], img[:, :, -1]], axis=1
    )
    bg = np.median(border, axis=1)
    w = np.linalg.norm(img - bg.reshape(3, 1, 1), axis=0)
    total = w.sum()
    if total < 1e-9:
        return np.full(img.shape[1:], 1.0 / img[0].size)
    return w / total


def foreground_centroid(img: np.ndarray) -> tuple[float, float]:
    """(x, y) centroid of the soft foreground mask, in pixel units."""
    img = np.asarray(img)
    w = _foreground_weights(img)
    ys, xs = np.meshgrid(np.arange(img.shape[1]), np.arange(img.shape[2]), indexing="ij")
    return float((w * xs).sum()), float((w * ys).sum())


def mean_foreground_hue(img: np.ndarray) -> float:
    """Weighted circular mean of hue over the soft foreground, in [0,1)."""
    img = np.asarray(img)
    w = _foreground_weights(img)
    hue = rgb_to_hue(np.moveaxis(np.clip(img, 0.0, 1.0), 0, -1))
    ang = 2.0 * np.pi * hue
    s = (w * np.sin(ang)).sum()
    c = (w * np.cos(ang)).sum()
    return float((np.arctan2(s, c) / (2.0 * np.pi)) % 1.0)


def hue_distance(h1: float, h2: float) -> float:
    """Circular distance on the hue circle, in [0, 0.5]."""
    d = abs(h1 - h2) % 1.0
    return min(d, 1.0 - d)


def flip_horizontal(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(images[..., ::-1])


def batch_stream(images: Tensor, rng: np.random.Generator, batch_size: int, flip: bool = True):
    """Endless shuffled batches with random horizontal flips."""
    data = images.numpy()
    n = data.shape[0]
    if batch_size < 1 or batch_size > n:
        raise ValidationError(f"batch_size must be in [1, {n}], got {batch_size}")
    while True:
        idx = rng.integers(0, n, batch_size)
        batch = data[idx]
        if flip:
            mask = rng.integers(0, 2, batch_size).astype(bool)
            batch = batch.copy()
            batch[mask] = batch[mask, :, :, ::-1]
        yield np.ascontiguousarray(batch), idx
