"""Disentanglement and sample-quality metrics.

The learned perceptual networks the literature uses are out of scope,
so distances run through a frozen random conv stack: fixed seed, never
trained, differentiable through the tensor engine (the inversion losses
backprop through it). Random features preserve enough ordering for the
directional properties tested here; absolute values are not comparable
to published numbers.

Generators are duck-typed: anything with sample_style(rng, n),
sample_content(rng, n), and synthesize(s, c) works, which is how the
closed-form test doubles (constant and linear generators) get certified
against analytic values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ValidationError
from . import tensor as T
from .tensor import Tensor, as_tensor


class IdentityExtractor:
    """Features = flattened pixels; turns perceptual distance into pixel L2."""

    def extract(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        n = x.shape[0]
        return T.reshape(x, (n, x.size // n))


class FeatureExtractor:
    """Frozen random two-conv stack + random projection to a feature vector.

    Weights derive from the seed alone; the projection for each input
    size is derived from (seed, height) so any resolution works and
    repeated construction is bit-identical.
    """

    def __init__(self, seed: int = 0, out_dim: int = 64, in_channels: int = 3):
        self.seed = int(seed)
        self.out_dim = int(out_dim)
        if self.out_dim < 1:
            raise ValidationError("out_dim must be positive")
        rng = np.random.default_rng(self.seed)
        c1, c2 = 8, 16
        self._w1 = Tensor(rng.standard_normal((c1, in_channels, 3, 3)) * np.sqrt(2.0 / (in_channels * 9)))
        self._b1 = Tensor(rng.standard_normal(c1) * 0.1)
        self._w2 = Tensor(rng.standard_normal((c2, c1, 3, 3)) * np.sqrt(2.0 / (c1 * 9)))
        self._b2 = Tensor(rng.standard_normal(c2) * 0.1)
        self._channels = c2
        self._proj_cache: dict[int, Tensor] = {}

    def _projection(self, flat_dim: int) -> Tensor:
        proj = self._proj_cache.get(flat_dim)
        if proj is None:
            rng = np.random.default_rng([self.seed, flat_dim])
            proj = Tensor(rng.standard_normal((self.out_dim, flat_dim)) * np.sqrt(1.0 / flat_dim))
            self._proj_cache[flat_dim] = proj
        return proj

    def extract(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4:
            raise DimensionError("extractor expects N,C,H,W images", x.shape)
        n = x.shape[0]
        h = T.leaky_relu(T.conv2d(x, self._w1, stride=2, pad=1) + T.reshape(self._b1, (1, 8, 1, 1)), 0.2)
        h = T.leaky_relu(T.conv2d(h, self._w2, stride=2, pad=1) + T.reshape(self._b2, (1, 16, 1, 1)), 0.2)
        flat = T.reshape(h, (n, h.size // n))
        return T.matmul(flat, T.transpose(self._projection(flat.shape[1])))


def perceptual_distance(x: Tensor, y: Tensor, extractor) -> Tensor:
    """Squared feature distance, averaged over the batch. Differentiable."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError("perceptual_distance needs equal shapes", x.shape, y.shape)
    fx, fy = extractor.extract(x), extractor.extract(y)
    diff = fx - fy
    return T.tmean(T.tsum(diff * diff, axis=1))


def _pair_distances(x: Tensor, y: Tensor, extractor) -> np.ndarray:
    """Per-sample squared feature distances, as data."""
    with T.no_grad():
        fx = extractor.extract(x).numpy()
        fy = extractor.extract(y).numpy()
    return np.sum((fx - fy) ** 2, axis=1)


# -- path length ------------------------------------------------------------


@dataclass
class PPLConfig:
    mode: str = "W"
    eps: float = 1e-4
    n_samples: int = 1000
    inner: int = 50
    outer: int = 20

    def __post_init__(self):
        if self.mode not in ("W", "Ws", "Wc"):
            raise ValidationError(f"mode must be W, Ws, or Wc, got {self.mode!r}")
        if not self.eps > 0:
            raise ValidationError("eps must be positive")
        if self.n_samples < 1 or self.inner < 1 or self.outer < 1:
            raise ValidationError("sample counts must be positive")


def _lerp(a: Tensor, b: Tensor, t: np.ndarray) -> Tensor:
    return Tensor(t * a.numpy() + (1.0 - t) * b.numpy())


def ppl(generator, config: PPLConfig, seed: int, extractor=None) -> float:
    """Mean squared step distance along code interpolations, over eps^2.

    t is uniform on [0, 1-eps] so the probe t+eps never leaves the
    segment. Mode W moves style and content together (one t per sample);
    Ws holds content fixed per outer group and interpolates styles; Wc
    is the mirror image.
    """
    if extractor is None:
        extractor = FeatureExtractor(seed=0)
    rng = np.random.default_rng(seed)
    eps = config.eps
    total, count = 0.0, 0

    def step(s1, s2, c1, c2, m):
        nonlocal total, count
        t = rng.uniform(0.0, 1.0 - eps, (m, 1))
        img_a = generator.synthesize(_lerp(s1, s2, t), _lerp(c1, c2, t))
        img_b = generator.synthesize(_lerp(s1, s2, t + eps), _lerp(c1, c2, t + eps))
        total += float(_pair_distances(img_a, img_b, extractor).sum())
        count += m

    if config.mode == "W":
        remaining = config.n_samples
        while remaining > 0:
            m = min(remaining, 128)
            step(
                generator.sample_style(rng, m),
                generator.sample_style(rng, m),
                generator.sample_content(rng, m),
                generator.sample_content(rng, m),
                m,
            )
            remaining -= m
    elif config.mode == "Ws":
        for _ in range(config.outer):
            c_fix = generator.sample_content(rng, 1)
            c = Tensor(np.repeat(c_fix.numpy(), config.inner, axis=0))
            step(
                generator.sample_style(rng, config.inner),
                generator.sample_style(rng, config.inner),
                c,
                c,
                config.inner,
            )
    else:  # Wc
        for _ in range(config.outer):
            s_fix = generator.sample_style(rng, 1)
            s = Tensor(np.repeat(s_fix.numpy(), config.inner, axis=0))
            step(
                s,
                s,
                generator.sample_content(rng, config.inner),
                generator.sample_content(rng, config.inner),
                config.inner,
            )
    return total / (count * eps * eps)


# -- Frechet ----------------------------------------------------------------


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise DimensionError("covariance must be square over mu", self.sigma.shape, self.mu.shape)
        if self.n < 2:
            raise ContractError(f"need at least 2 samples, got {self.n}")
        asym = np.abs(self.sigma - self.sigma.T).max() if self.sigma.size else 0.0
        if asym > 1e-10:
            raise ContractError(f"covariance asymmetric by {asym:.3g}")
        self.sigma = (self.sigma + self.sigma.T) / 2.0


def feature_stats(images: Tensor, extractor) -> GaussianStats:
    """Mean and unbiased covariance of extractor features."""
    with T.no_grad():
        feats = extractor.extract(as_tensor(images)).numpy()
    n = feats.shape[0]
    if n < 2:
        raise ContractError(f"need at least 2 images, got {n}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / (n - 1)
    return GaussianStats(mu=mu, sigma=sigma, n=n)


def _sqrt_psd(m: np.ndarray, clip: float = -1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [clip, 0) are rounding noise and clamp to zero; below
    clip the matrix is genuinely not PSD and the computation refuses.
    """
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    if vals.min() < clip * max(1.0, float(np.abs(vals).max())):
        raise NumericError(f"matrix square root of non-PSD matrix (min eigenvalue {vals.min():.3g})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(Sig_a + Sig_b - 2 (Sig_a Sig_b)^(1/2))."""
    if a.mu.shape != b.mu.shape:
        raise DimensionError("stat dimensions differ", a.mu.shape, b.mu.shape)
    mean_term = float(np.sum((a.mu - b.mu) ** 2))
    # (Sa Sb)^(1/2) has the trace of sqrt(S Sb S) with S = sqrt(Sa),
    # and the latter is symmetric PSD, so eigh applies
    s = _sqrt_psd(a.sigma)
    inner = _sqrt_psd(s @ b.sigma @ s)
    trace_term = float(np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(inner))
    return mean_term + trace_term


# -- diversity --------------------------------------------------------------


def diversity_score(
    generator,
    mode: str = "both",
    counts: tuple = (5, 8),
    seed: int = 0,
    extractor=None,
    pairing: str = "all",
) -> float:
    """Mean pairwise feature distance across sampled image groups.

    style_only fixes the content code within each group, content_only
    fixes the style code; both varies the two together. pairing chooses
    between all unordered pairs (default) and consecutive disjoint pairs.
    """
    if mode not in ("both", "style_only", "content_only"):
        raise ValidationError(f"unknown diversity mode {mode!r}")
    if pairing not in ("all", "consecutive"):
        raise ValidationError(f"unknown pairing {pairing!r}")
    groups, per_group = counts
    if groups < 1 or per_group < 2:
        raise ValidationError(f"need >= 1 group and >= 2 samples per group, got {counts}")
    if extractor is None:
        extractor = FeatureExtractor(seed=0)
    rng = np.random.default_rng(seed)

    group_means = []
    for _ in range(groups):
        if mode == "style_only":
            s = generator.sample_style(rng, per_group)
            c = Tensor(np.repeat(generator.sample_content(rng, 1).numpy(), per_group, axis=0))
        elif mode == "content_only":
            s = Tensor(np.repeat(generator.sample_style(rng, 1).numpy(), per_group, axis=0))
            c = generator.sample_content(rng, per_group)
        else:
            s = generator.sample_style(rng, per_group)
            c = generator.sample_content(rng, per_group)
        imgs = generator.synthesize(s, c)
        with T.no_grad():
            feats = extractor.extract(imgs).numpy()
        if pairing == "all":
            dists = [
                float(np.sum((feats[i] - feats[j]) ** 2))
                for i in range(per_group)
                for j in range(i + 1, per_group)
            ]
        else:
            dists = [
                float(np.sum((feats[i] - feats[i + 1]) ** 2))
                for i in range(0, per_group - 1, 2)
            ]
        group_means.append(float(np.mean(dists)))
    return float(np.mean(group_means))


def paired_samples(generator, vary: str = "content", n_pairs: int = 32, seed: int = 0):
    """Image pairs differing only in the varied code family.

    Returns (first, second) stacks of shape (n_pairs, 3, H, W). Pair i
    shares its style row when vary="content" and its content row when
    vary="style", so per-pair image differences isolate one code's
    effect. Feed the stacks to spatial or color probes to ask which
    factors that code moves.
    """
    if vary not in ("content", "style"):
        raise ValidationError(f"unknown vary {vary!r}")
    if n_pairs < 1:
        raise ValidationError(f"need >= 1 pair, got {n_pairs}")
    rng = np.random.default_rng(seed)
    with T.no_grad():
        if vary == "content":
            s = generator.sample_style(rng, n_pairs)
            a = generator.synthesize(s, generator.sample_content(rng, n_pairs))
            b = generator.synthesize(s, generator.sample_content(rng, n_pairs))
        else:
            c = generator.sample_content(rng, n_pairs)
            a = generator.synthesize(generator.sample_style(rng, n_pairs), c)
            b = generator.synthesize(generator.sample_style(rng, n_pairs), c)
    return a, b


# -- reporting --------------------------------------------------------------

METRIC_CSV_HEADER = "metric,mode,value,n_samples,seed"


def format_metric_row(metric: str, mode: str, value: float, n_samples: int, seed: int) -> str:
    return f"{metric},{mode},{value:.12g},{n_samples},{seed}"
