"""Building blocks: instance re-statistics (AdaIN), the diagonal spatial
attention gate (DAT), code mapping MLPs, and additive per-pixel noise.

Two function families live here. The reference forms work on a single
feature map laid out as a rows-by-channels matrix (HW x C), which makes
the linear algebra transparent: channel restyling multiplies on the
column side, spatial gating on the row side, and the two diagonal
actions commute. The *_batch forms work on N,C,H,W stacks and are what
the networks call; tests pin them to the reference forms sample by
sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from . import tensor as T
from .tensor import Tensor, as_tensor


@dataclass
class AdaINParams:
    """Per-channel scale (diagonal of the column transform) and bias."""

    scale: Tensor
    bias: Tensor
    eps: float = 1e-12

    def __post_init__(self):
        if self.scale.ndim != 1 or self.bias.ndim != 1:
            raise DimensionError(
                "AdaIN scale/bias must be vectors", self.scale.shape, self.bias.shape
            )
        if self.scale.shape != self.bias.shape:
            raise DimensionError("AdaIN scale/bias lengths differ", self.scale.shape, self.bias.shape)
        if not self.eps > 0:
            raise ValidationError(f"AdaIN eps must be positive, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.scale.shape[0]


@dataclass
class DiffAttentionMap:
    """Sigmoid-bounded spatial gate produced from a mapped content code."""

    d: Tensor
    source_layer: int = 0

    def __post_init__(self):
        if self.d.ndim != 2:
            raise DimensionError("attention map must be H x W", self.d.shape)


@dataclass
class DATParams:
    """Affine map from content code to spatial logits, plus the gate gain."""

    beta: Tensor
    map_weight: Tensor
    map_bias: Tensor
    height: int
    width: int

    def __post_init__(self):
        hw = self.height * self.width
        if self.map_weight.ndim != 2 or self.map_weight.shape[0] != hw:
            raise DimensionError(
                f"map_weight must be {hw} x dim(c)", self.map_weight.shape
            )
        if self.map_bias.shape != (hw,):
            raise DimensionError(f"map_bias must have length {hw}", self.map_bias.shape)
        if self.beta.size != 1:
            raise DimensionError("beta must be a scalar", self.beta.shape)

    @property
    def code_dim(self) -> int:
        return self.map_weight.shape[1]


@dataclass
class MappingNet:
    """MLP over latent codes: leaky-ReLU(0.2) between layers, linear output."""

    layers: list  # [(weight out x in, bias out)]
    negative_slope: float = 0.2

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("MappingNet needs at least one layer")
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"mapping layer {i} weight/bias mismatch", w.shape, b.shape)
            if prev_out is not None and w.shape[1] != prev_out:
                raise DimensionError(
                    f"mapping layer {i} input width breaks the chain", (prev_out,), w.shape
                )
            prev_out = w.shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]


# -- reference (single feature map, HW x C) ---------------------------------


def adain_forward(x: Tensor, params: AdaINParams) -> Tensor:
    """Restyle each channel column to mean bias[j], spread |scale[j]|.

    Statistics are the instance's own (population std over the HW rows).
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("adain_forward expects a HW x C matrix", x.shape)
    if x.shape[0] < 1:
        raise DimensionError("adain_forward needs at least one row", x.shape)
    if x.shape[1] != params.channels:
        raise DimensionError("channel count mismatch", x.shape, params.scale.shape)
    mu = T.tmean(x, axis=0, keepdims=True)
    centered = x - mu
    sigma = T.tsqrt(T.tmean(centered * centered, axis=0, keepdims=True))
    normalized = centered / (sigma + params.eps)
    c = params.channels
    return normalized * T.reshape(params.scale, (1, c)) + T.reshape(params.bias, (1, c))


def attention_map(c: Tensor, params: DATParams, source_layer: int = 0) -> DiffAttentionMap:
    """d = sigmoid(map_weight . c + map_bias), reshaped row-major to H x W."""
    c = as_tensor(c)
    if c.ndim != 1 or c.shape[0] != params.code_dim:
        raise DimensionError(
            f"content code must have length {params.code_dim}", c.shape
        )
    hw = params.height * params.width
    logits = T.matmul(params.map_weight, T.reshape(c, (params.code_dim, 1)))
    logits = logits + T.reshape(params.map_bias, (hw, 1))
    d = T.reshape(T.sigmoid(logits), (params.height, params.width))
    return DiffAttentionMap(d=d, source_layer=source_layer)


def dat_forward(x: Tensor, d, beta) -> Tensor:
    """Row-space gate: y_i = (1 + beta * d_i) * x_i, i.e. (I + beta*diag(d)) X."""
    x = as_tensor(x)
    dm = d.d if isinstance(d, DiffAttentionMap) else as_tensor(d)
    beta = as_tensor(beta)
    if x.ndim != 2:
        raise DimensionError("dat_forward expects a HW x C matrix", x.shape)
    if dm.size != x.shape[0]:
        raise DimensionError("attention size must equal the row count", dm.shape, x.shape)
    gate = 1.0 + beta * T.reshape(dm, (x.shape[0], 1))
    return gate * x


def combined_transform(x: Tensor, d, beta, adain: AdaINParams) -> Tensor:
    """Reference semantics of one gated restyling block: A X T + R.

    A is the diagonal row action (I + beta*diag(d)), T the diagonal column
    scale, R the row-broadcast bias. No normalization here; this is the
    pure affine picture the diagonal algebra is stated in.
    """
    y = dat_forward(x, d, beta)
    c = adain.channels
    if y.shape[1] != c:
        raise DimensionError("channel count mismatch", y.shape, adain.scale.shape)
    return y * T.reshape(adain.scale, (1, c)) + T.reshape(adain.bias, (1, c))


def mapping_forward(z: Tensor, net: MappingNet) -> Tensor:
    """MLP over a single code (dim,) or a batch (N, dim)."""
    z = as_tensor(z)
    single = z.ndim == 1
    h = T.reshape(z, (1, z.shape[0])) if single else z
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise DimensionError(f"code width must be {net.in_dim}", z.shape)
    for i, (w, b) in enumerate(net.layers):
        h = T.matmul(h, T.transpose(w)) + T.reshape(b, (1, b.shape[0]))
        if i + 1 < net.depth:
            h = T.leaky_relu(h, net.negative_slope)
    return T.reshape(h, (net.out_dim,)) if single else h


def noise_inject(x: Tensor, noise: Tensor, scale: Tensor) -> Tensor:
    """Additive rank-1 perturbation: Y = X + noise (outer) scale."""
    x, noise, scale = as_tensor(x), as_tensor(noise), as_tensor(scale)
    if x.ndim != 2:
        raise DimensionError("noise_inject expects a HW x C matrix", x.shape)
    if noise.shape != (x.shape[0],) or scale.shape != (x.shape[1],):
        raise DimensionError(
            "noise must match rows, scale must match channels",
            noise.shape,
            scale.shape,
        )
    outer = T.matmul(T.reshape(noise, (x.shape[0], 1)), T.reshape(scale, (1, x.shape[1])))
    return x + outer


# -- batched (N, C, H, W) ---------------------------------------------------


def adain_forward_batch(x: Tensor, scale: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-sample instance restyling; scale/bias are (N, C) rows."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("adain_forward_batch expects N,C,H,W", x.shape)
    n, c, h, w = x.shape
    if scale.shape != (n, c) or bias.shape != (n, c):
        raise DimensionError("scale/bias must be (N, C)", scale.shape, bias.shape)
    mu = T.tmean(x, axis=(2, 3), keepdims=True)
    centered = x - mu
    sigma = T.tsqrt(T.tmean(centered * centered, axis=(2, 3), keepdims=True))
    normalized = centered / (sigma + eps)
    return normalized * T.reshape(scale, (n, c, 1, 1)) + T.reshape(bias, (n, c, 1, 1))


def attention_map_batch(codes: Tensor, params: DATParams) -> Tensor:
    """Per-sample gates: (N, dim_c) codes -> (N, 1, H, W) sigmoid maps."""
    codes = as_tensor(codes)
    if codes.ndim != 2 or codes.shape[1] != params.code_dim:
        raise DimensionError(f"codes must be (N, {params.code_dim})", codes.shape)
    n = codes.shape[0]
    hw = params.height * params.width
    logits = T.matmul(codes, T.transpose(params.map_weight)) + T.reshape(params.map_bias, (1, hw))
    return T.reshape(T.sigmoid(logits), (n, 1, params.height, params.width))


def dat_forward_batch(x: Tensor, maps: Tensor, beta) -> Tensor:
    """Gate a feature stack with per-sample maps (N, 1, H, W)."""
    x = as_tensor(x)
    if x.ndim != 4 or maps.ndim != 4:
        raise DimensionError("dat_forward_batch expects N,C,H,W and N,1,H,W", x.shape, maps.shape)
    if maps.shape != (x.shape[0], 1, x.shape[2], x.shape[3]):
        raise DimensionError("map stack shape mismatch", maps.shape, x.shape)
    return x * (1.0 + as_tensor(beta) * maps)


def noise_inject_batch(x: Tensor, noise: Tensor, scale: Tensor) -> Tensor:
    """X + noise * scale with noise (N,1,H,W) and per-channel scale (C,)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("noise_inject_batch expects N,C,H,W", x.shape)
    n, c, h, w = x.shape
    if noise.shape != (n, 1, h, w):
        raise DimensionError("noise must be (N,1,H,W)", noise.shape, x.shape)
    if scale.shape != (c,):
        raise DimensionError("scale must be per-channel", scale.shape, x.shape)
    return x + noise * T.reshape(scale, (1, c, 1, 1))


# -- constructors -----------------------------------------------------------


def make_mapping(rng: np.random.Generator, in_dim: int, width: int, out_dim: int, depth: int) -> MappingNet:
    """Fan-in scaled normal init; gain 2 for the leaky-ReLU hidden layers."""
    if depth < 1:
        raise ValidationError(f"mapping depth must be >= 1, got {depth}")
    dims = [in_dim] + [width] * (depth - 1) + [out_dim]
    layers = []
    for i in range(depth):
        fan_in = dims[i]
        gain = 2.0 if i + 1 < depth else 1.0
        w = Tensor(rng.standard_normal((dims[i + 1], fan_in)) * np.sqrt(gain / fan_in), requires_grad=True)
        b = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
        layers.append((w, b))
    return MappingNet(layers=layers)


def make_dat(rng: np.random.Generator, height: int, width: int, code_dim: int) -> DATParams:
    """Gate starts as the exact identity: beta = 0."""
    hw = height * width
    w = Tensor(rng.standard_normal((hw, code_dim)) * np.sqrt(1.0 / code_dim), requires_grad=True)
    b = Tensor(np.zeros(hw), requires_grad=True)
    beta = Tensor(np.zeros(()), requires_grad=True)
    return DATParams(beta=beta, map_weight=w, map_bias=b, height=height, width=width)
