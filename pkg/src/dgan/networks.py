"""Generator, discriminator, and inversion encoders at desk scale.

The generator grows a learned 4x4 constant to the target resolution.
Each resolution holds two conv sites; a site runs conv -> optional
additive noise -> spatial gate from the content code -> instance
restyling from the style code -> leaky-ReLU. Nearest-neighbor 2x
upsampling sits between resolutions, and a 1x1 conv produces RGB.

Content codes reach the image only through the spatial gates (row
action); style codes only through the per-channel restyling (column
action). Tests check that split structurally on the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, ValidationError
from . import tensor as T
from .layers import (
    DATParams,
    MappingNet,
    adain_forward_batch,
    attention_map_batch,
    dat_forward_batch,
    make_dat,
    make_mapping,
    mapping_forward,
    noise_inject_batch,
)
from .tensor import Tensor, as_tensor


@dataclass
class GeneratorSpec:
    resolutions: tuple = (4, 8, 16, 32)
    channels: tuple = (128, 128, 64, 32)
    dim_z_s: int = 64
    dim_z_c: int = 64
    dim_s: int = 64
    dim_c: int = 64
    mapping_depth: int = 4
    dat_max_resolution: int = 32
    use_pixel_noise: bool = False
    num_style_domains: int = 1
    adain_eps: float = 1e-12

    def __post_init__(self):
        res = tuple(self.resolutions)
        if not res or res[0] != 4:
            raise ValidationError(f"resolutions must start at 4, got {res}")
        for a, b in zip(res, res[1:]):
            if b != 2 * a:
                raise ValidationError(f"resolutions must double: {a} -> {b}")
        if len(self.channels) != len(res):
            raise ValidationError("need one channel count per resolution")
        widths = (self.dim_z_s, self.dim_z_c, self.dim_s, self.dim_c, self.mapping_depth)
        if any(w < 1 for w in widths) or any(c < 1 for c in self.channels):
            raise ValidationError("all widths must be positive")
        if self.dat_max_resolution not in res:
            raise ValidationError(
                f"dat_max_resolution {self.dat_max_resolution} not in {res}"
            )
        if self.num_style_domains < 1:
            raise ValidationError("num_style_domains must be >= 1")
        if not self.adain_eps > 0:
            raise ValidationError("adain_eps must be positive")
        self.resolutions = res
        self.channels = tuple(self.channels)

    @property
    def n_sites(self) -> int:
        return 2 * len(self.resolutions)

    @property
    def out_resolution(self) -> int:
        return self.resolutions[-1]

    def site_resolution(self, site: int) -> int:
        return self.resolutions[site // 2]

    def site_has_gate(self, site: int) -> bool:
        return self.site_resolution(site) <= self.dat_max_resolution


@dataclass
class LayerCodes:
    """Mapped codes per site, so individual layers can be re-steered."""

    styles: list  # n_sites tensors of (N, dim_s)
    contents: list  # n_sites tensors of (N, dim_c)

    def __post_init__(self):
        if len(self.styles) != len(self.contents):
            raise DimensionError(
                "style/content site counts differ",
                (len(self.styles),),
                (len(self.contents),),
            )

    @classmethod
    def shared(cls, s: Tensor, c: Tensor, n_sites: int) -> "LayerCodes":
        return cls(styles=[s] * n_sites, contents=[c] * n_sites)

    def replace_content(self, site: int, c: Tensor) -> "LayerCodes":
        contents = list(self.contents)
        contents[site] = c
        return LayerCodes(styles=list(self.styles), contents=contents)

    def replace_style(self, site: int, s: Tensor) -> "LayerCodes":
        styles = list(self.styles)
        styles[site] = s
        return LayerCodes(styles=styles, contents=list(self.contents))

    @property
    def batch(self) -> int:
        return self.styles[0].shape[0]


@dataclass
class EncoderSpec:
    resolution: int = 32
    channels: tuple = (32, 64, 128, 128)
    head_count: int = 1
    out_dim: int = 64
    dense_width: int = 64

    def __post_init__(self):
        if self.head_count < 1:
            raise ValidationError("head_count must be >= 1")
        if self.resolution < 4 or self.resolution & (self.resolution - 1):
            raise ValidationError(f"resolution must be a power of two >= 4, got {self.resolution}")
        if len(self.channels) != int(np.log2(self.resolution / 4)) + 1:
            raise ValidationError(
                f"need {int(np.log2(self.resolution / 4)) + 1} channel entries for "
                f"resolution {self.resolution}, got {len(self.channels)}"
            )


@dataclass
class SiteParams:
    conv_w: Tensor
    conv_b: Tensor
    noise_scale: Tensor
    dat: DATParams | None
    scale_w: Tensor  # style -> channel scale delta
    scale_b: Tensor
    bias_w: Tensor  # style -> channel bias
    bias_b: Tensor


@dataclass
class GeneratorParams:
    const: Tensor
    style_mappings: list  # one MappingNet per style domain
    content_mapping: MappingNet
    sites: list  # SiteParams, two per resolution
    rgb_w: Tensor
    rgb_b: Tensor


@dataclass
class ConvStackParams:
    """Shared body of discriminator and encoders: downsample to 4x4, dense."""

    from_rgb_w: Tensor
    from_rgb_b: Tensor
    down_ws: list
    down_bs: list
    dense_w: Tensor
    dense_b: Tensor
    heads: list  # [(w, b)] per head


# -- init -------------------------------------------------------------------


def _conv_init(rng, out_c, in_c, k, gain=2.0):
    fan_in = in_c * k * k
    return Tensor(
        rng.standard_normal((out_c, in_c, k, k)) * np.sqrt(gain / fan_in), requires_grad=True
    )


def _vec(n):
    return Tensor(np.zeros(n), requires_grad=True)


def _dense_init(rng, out_d, in_d, gain=2.0):
    return Tensor(rng.standard_normal((out_d, in_d)) * np.sqrt(gain / in_d), requires_grad=True)


def make_generator(rng: np.random.Generator, spec: GeneratorSpec) -> GeneratorParams:
    style_mappings = [
        make_mapping(rng, spec.dim_z_s, spec.dim_s, spec.dim_s, spec.mapping_depth)
        for _ in range(spec.num_style_domains)
    ]
    content_mapping = make_mapping(rng, spec.dim_z_c, spec.dim_c, spec.dim_c, spec.mapping_depth)
    const = Tensor(rng.standard_normal((spec.channels[0], 4, 4)), requires_grad=True)

    sites = []
    for site in range(spec.n_sites):
        ri = site // 2
        res = spec.resolutions[ri]
        out_c = spec.channels[ri]
        in_c = spec.channels[ri] if site % 2 else spec.channels[max(ri - 1, 0)]
        dat = make_dat(rng, res, res, spec.dim_c) if spec.site_has_gate(site) else None
        sites.append(
            SiteParams(
                conv_w=_conv_init(rng, out_c, in_c, 3),
                conv_b=_vec(out_c),
                noise_scale=_vec(out_c),
                dat=dat,
                scale_w=_dense_init(rng, out_c, spec.dim_s, gain=1.0),
                scale_b=_vec(out_c),
                bias_w=_dense_init(rng, out_c, spec.dim_s, gain=1.0),
                bias_b=_vec(out_c),
            )
        )
    return GeneratorParams(
        const=const,
        style_mappings=style_mappings,
        content_mapping=content_mapping,
        sites=sites,
        rgb_w=_conv_init(rng, 3, spec.channels[-1], 1, gain=1.0),
        rgb_b=_vec(3),
    )


def make_conv_stack(
    rng: np.random.Generator,
    resolution: int,
    channels: tuple,
    head_count: int,
    head_dim: int,
    dense_width: int,
) -> ConvStackParams:
    n_down = int(np.log2(resolution / 4))
    if len(channels) != n_down + 1:
        raise ValidationError(f"need {n_down + 1} channel entries, got {len(channels)}")
    down_ws, down_bs = [], []
    for i in range(n_down):
        down_ws.append(_conv_init(rng, channels[i + 1], channels[i], 3))
        down_bs.append(_vec(channels[i + 1]))
    feat = channels[-1] * 16
    heads = [
        (_dense_init(rng, head_dim, dense_width, gain=1.0), _vec(head_dim))
        for _ in range(head_count)
    ]
    return ConvStackParams(
        from_rgb_w=_conv_init(rng, channels[0], 3, 1),
        from_rgb_b=_vec(channels[0]),
        down_ws=down_ws,
        down_bs=down_bs,
        dense_w=_dense_init(rng, dense_width, feat),
        dense_b=_vec(dense_width),
        heads=heads,
    )


def make_discriminator(rng, resolution=32, channels=(32, 64, 128, 128), num_domains=1, dense_width=64):
    return make_conv_stack(rng, resolution, channels, num_domains, 1, dense_width)


def make_encoder(rng, spec: EncoderSpec) -> ConvStackParams:
    return make_conv_stack(
        rng, spec.resolution, spec.channels, spec.head_count, spec.out_dim, spec.dense_width
    )


# -- forward passes ---------------------------------------------------------


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor doubling of the two spatial axes."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("upsample2x expects N,C,H,W", x.shape)
    n, c, h, w = x.shape
    expanded = T.reshape(x, (n, c, h, 1, w, 1)) * Tensor(np.ones((1, 1, 1, 2, 1, 2)))
    return T.reshape(expanded, (n, c, 2 * h, 2 * w))


def _bias_nchw(b: Tensor) -> Tensor:
    return T.reshape(b, (1, b.shape[0], 1, 1))


def generator_forward(
    spec: GeneratorSpec,
    params: GeneratorParams,
    codes: LayerCodes,
    noise=None,
    attn_override=None,
    trace=None,
) -> Tensor:
    """Synthesize a batch of images from per-site mapped codes.

    noise: optional list of (N,1,H,W) tensors, one per site (entries may
    be None). attn_override: {site index: gate tensor} replacing the
    computed map for that site; values must sit in [0,1]. trace: a dict
    that receives "attention_maps" and "adain_scales" lists when given.
    """
    if len(codes.styles) != spec.n_sites:
        raise DimensionError(
            f"expected {spec.n_sites} code entries", (len(codes.styles),)
        )
    n = codes.batch
    attn_override = attn_override or {}
    for site in attn_override:
        if not (0 <= site < spec.n_sites) or not spec.site_has_gate(site):
            raise ContractError(f"site {site} has no attention gate to override")

    if trace is not None:
        trace["attention_maps"] = [None] * spec.n_sites
        trace["adain_scales"] = [None] * spec.n_sites

    x = T.reshape(params.const, (1,) + params.const.shape) * Tensor(np.ones((n, 1, 1, 1)))
    for site, sp in enumerate(params.sites):
        res = spec.site_resolution(site)
        if site % 2 == 0 and site > 0:
            x = upsample2x(x)
        s_code = codes.styles[site]
        c_code = codes.contents[site]
        if s_code.shape != (n, spec.dim_s) or c_code.shape != (n, spec.dim_c):
            raise DimensionError(
                f"site {site} codes must be ({n}, {spec.dim_s})/({n}, {spec.dim_c})",
                s_code.shape,
                c_code.shape,
            )

        x = T.conv2d(x, sp.conv_w, stride=1, pad=1) + _bias_nchw(sp.conv_b)

        if spec.use_pixel_noise and noise is not None and noise[site] is not None:
            x = noise_inject_batch(x, noise[site], sp.noise_scale)

        if sp.dat is not None:
            if site in attn_override:
                maps = _validated_override(attn_override[site], n, res)
            else:
                maps = attention_map_batch(c_code, sp.dat)
            if trace is not None:
                trace["attention_maps"][site] = maps
            x = dat_forward_batch(x, maps, sp.dat.beta)

        scale = 1.0 + T.matmul(s_code, T.transpose(sp.scale_w)) + T.reshape(sp.scale_b, (1, sp.scale_b.shape[0]))
        bias = T.matmul(s_code, T.transpose(sp.bias_w)) + T.reshape(sp.bias_b, (1, sp.bias_b.shape[0]))
        if trace is not None:
            trace["adain_scales"][site] = scale
        x = adain_forward_batch(x, scale, bias, eps=spec.adain_eps)
        x = T.leaky_relu(x, 0.2)

    return T.conv2d(x, params.rgb_w, stride=1, pad=0) + _bias_nchw(params.rgb_b)


def _validated_override(m, n: int, res: int) -> Tensor:
    m = as_tensor(m)
    if m.ndim == 2:
        if m.shape != (res, res):
            raise DimensionError(f"override must be {res}x{res}", m.shape)
        m = T.reshape(m, (1, 1, res, res)) * Tensor(np.ones((n, 1, 1, 1)))
    elif m.shape != (n, 1, res, res):
        raise DimensionError(f"override must be ({n},1,{res},{res}) or ({res},{res})", m.shape)
    vals = m.numpy()
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise ContractError(
            f"override values must lie in [0,1], got [{vals.min():.3g}, {vals.max():.3g}]"
        )
    return m


def _head_select(feat: Tensor, heads: list, domain, n: int) -> Tensor:
    """Evaluate every head, keep each sample's labeled one (one-hot mix)."""
    k = len(heads)
    if k == 1:
        w, b = heads[0]
        return T.matmul(feat, T.transpose(w)) + T.reshape(b, (1, b.shape[0]))
    dom = np.asarray(domain if domain is not None else 0)
    if dom.ndim == 0:
        dom = np.full(n, int(dom))
    if dom.shape != (n,):
        raise DimensionError(f"domain labels must be scalar or length {n}", dom.shape)
    if dom.min() < 0 or dom.max() >= k:
        raise ContractError(f"domain label out of range [0, {k}): {dom.tolist()}")
    out = None
    for h, (w, b) in enumerate(heads):
        mask = Tensor((dom == h).astype(np.float64).reshape(n, 1))
        term = (T.matmul(feat, T.transpose(w)) + T.reshape(b, (1, b.shape[0]))) * mask
        out = term if out is None else out + term
    return out


def conv_stack_forward(x: Tensor, params: ConvStackParams, domain=None) -> Tensor:
    """Downsample to 4x4, flatten, dense, then the selected head."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError("expected N,3,H,W image batch", x.shape)
    n = x.shape[0]
    h = T.leaky_relu(T.conv2d(x, params.from_rgb_w, 1, 0) + _bias_nchw(params.from_rgb_b), 0.2)
    for w, b in zip(params.down_ws, params.down_bs):
        h = T.leaky_relu(T.conv2d(h, w, stride=2, pad=1) + _bias_nchw(b), 0.2)
    flat = T.reshape(h, (n, h.shape[1] * h.shape[2] * h.shape[3]))
    feat = T.leaky_relu(
        T.matmul(flat, T.transpose(params.dense_w)) + T.reshape(params.dense_b, (1, params.dense_b.shape[0])),
        0.2,
    )
    return _head_select(feat, params.heads, domain, n)


def discriminator_forward(image: Tensor, params: ConvStackParams, domain=None) -> Tensor:
    """Raw realness logit(s), shape (N, 1)."""
    return conv_stack_forward(image, params, domain)


def encoder_forward(image: Tensor, spec: EncoderSpec, params: ConvStackParams, domain=None) -> Tensor:
    """Code vector(s) from the selected head, shape (N, out_dim)."""
    if image.ndim != 4 or image.shape[2] != spec.resolution:
        raise DimensionError(
            f"encoder expects N,3,{spec.resolution},{spec.resolution}", image.shape
        )
    out = conv_stack_forward(image, params, domain)
    if out.shape[1] != spec.out_dim:
        raise DimensionError(f"head width must be {spec.out_dim}", out.shape)
    return out


def truncate(w: Tensor, psi: float, w_mean: Tensor) -> Tensor:
    """Pull a mapped code toward the mean: w_mean + psi * (w - w_mean)."""
    w, w_mean = as_tensor(w), as_tensor(w_mean)
    if not 0.0 <= psi <= 1.0:
        raise ContractError(f"psi must lie in [0, 1], got {psi}")
    if w.shape != w_mean.shape and w_mean.shape != w.shape[-1:]:
        raise DimensionError("w and w_mean shapes incompatible", w.shape, w_mean.shape)
    mean = w_mean if w_mean.shape == w.shape else T.reshape(w_mean, (1,) + w_mean.shape) * Tensor(np.ones((w.shape[0], 1)))
    return mean + psi * (w - mean)


# -- parameter bookkeeping --------------------------------------------------


def _mapping_params(prefix: str, net: MappingNet, out: dict):
    for i, (w, b) in enumerate(net.layers):
        out[f"{prefix}.l{i}.w"] = w
        out[f"{prefix}.l{i}.b"] = b


def generator_parameters(params: GeneratorParams) -> dict:
    out: dict = {"const": params.const}
    for d, net in enumerate(params.style_mappings):
        _mapping_params(f"style_map.d{d}", net, out)
    _mapping_params("content_map", params.content_mapping, out)
    for i, sp in enumerate(params.sites):
        p = f"sites.{i}"
        out[f"{p}.conv_w"] = sp.conv_w
        out[f"{p}.conv_b"] = sp.conv_b
        out[f"{p}.noise_scale"] = sp.noise_scale
        if sp.dat is not None:
            out[f"{p}.dat.beta"] = sp.dat.beta
            out[f"{p}.dat.map_w"] = sp.dat.map_weight
            out[f"{p}.dat.map_b"] = sp.dat.map_bias
        out[f"{p}.scale_w"] = sp.scale_w
        out[f"{p}.scale_b"] = sp.scale_b
        out[f"{p}.bias_w"] = sp.bias_w
        out[f"{p}.bias_b"] = sp.bias_b
    out["rgb_w"] = params.rgb_w
    out["rgb_b"] = params.rgb_b
    return out


def conv_stack_parameters(params: ConvStackParams, prefix: str = "") -> dict:
    out = {
        f"{prefix}from_rgb_w": params.from_rgb_w,
        f"{prefix}from_rgb_b": params.from_rgb_b,
    }
    for i, (w, b) in enumerate(zip(params.down_ws, params.down_bs)):
        out[f"{prefix}down.{i}.w"] = w
        out[f"{prefix}down.{i}.b"] = b
    out[f"{prefix}dense_w"] = params.dense_w
    out[f"{prefix}dense_b"] = params.dense_b
    for h, (w, b) in enumerate(params.heads):
        out[f"{prefix}head.{h}.w"] = w
        out[f"{prefix}head.{h}.b"] = b
    return out


# -- sampling convenience ---------------------------------------------------


class GeneratorHandle:
    """Bundles spec + params behind the three-method sampling interface
    the metrics accept: sample_style, sample_content, synthesize."""

    def __init__(self, spec: GeneratorSpec, params: GeneratorParams, domain: int = 0):
        self.spec = spec
        self.params = params
        self.domain = domain

    def sample_style(self, rng: np.random.Generator, n: int) -> Tensor:
        z = Tensor(rng.standard_normal((n, self.spec.dim_z_s)))
        with T.no_grad():
            return mapping_forward(z, self.params.style_mappings[self.domain])

    def sample_content(self, rng: np.random.Generator, n: int) -> Tensor:
        z = Tensor(rng.standard_normal((n, self.spec.dim_z_c)))
        with T.no_grad():
            return mapping_forward(z, self.params.content_mapping)

    def synthesize(self, s: Tensor, c: Tensor, noise=None, attn_override=None) -> Tensor:
        codes = LayerCodes.shared(s, c, self.spec.n_sites)
        with T.no_grad():
            return generator_forward(
                self.spec, self.params, codes, noise=noise, attn_override=attn_override
            )

    def style_mean(self, rng: np.random.Generator, n: int = 512) -> Tensor:
        w = self.sample_style(rng, n)
        return T.tmean(w, axis=0)
