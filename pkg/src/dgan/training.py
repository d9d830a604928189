"""Optimizer and training loops.

Three loops live here: adversarial training of the generator pair,
encoder training against a frozen generator, and per-image latent
fitting. All three share one Adam implementation operating on named
parameter dicts, and all randomness flows from a single seed through
labeled sub-streams, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import batch_stream
from .errors import ContractError, DimensionError, NumericError, ValidationError
from .io import Checkpoint, save_checkpoint
from .losses import (
    LossWeights,
    adv_loss_d,
    adv_loss_g,
    ds_loss,
    inversion_encoder_loss,
    inversion_latent_loss,
    latent_opt_loss,
    r1_penalty,
)
from .networks import (
    ConvStackParams,
    EncoderSpec,
    GeneratorParams,
    GeneratorSpec,
    LayerCodes,
    conv_stack_parameters,
    discriminator_forward,
    encoder_forward,
    generator_forward,
    generator_parameters,
    make_discriminator,
    make_encoder,
    make_generator,
    mapping_forward,
)
from .seeds import make_rng
from .tensor import GradientMap, Tensor, backward

GAN_CSV_HEADER = "step,loss_g,loss_d,loss_ds,r1,effective_lambda"
INVERSION_CSV_HEADER = "step,loss_e,loss_latent,loss_rec,loss_d,lambda_lat,lambda_adv"


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.step < 0:
            raise ValidationError(f"step must be >= 0, got {self.step}")


def _grad_array(grads, name: str, param: Tensor):
    if isinstance(grads, GradientMap):
        g = grads.get(param)
        return None if g is None else g.numpy()
    g = grads.get(name)
    if g is None:
        return None
    return g.numpy() if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)


def adam_step(params: dict, grads, state: AdamState):
    """One bias-corrected Adam update, applied to params in place.

    grads may be a GradientMap (keyed by the parameter tensors) or a
    dict keyed by the same names as params; missing entries count as
    zero gradient.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = _grad_array(grads, name, p)
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape mismatch for {name!r}", g.shape, p.shape)
        m = state.m.get(name)
        if m is None:
            m = np.zeros(p.shape)
            state.m[name] = m
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- configuration ----------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay_step: int | None = None
    lr_decayed: float = 5e-4
    g_lr: float | None = None  # None: same as lr; 0 freezes the generator
    seed: int = 0
    checkpoint_interval: int = 100
    ds_raise_step: int | None = None  # when set, lambda_ds becomes ds_raised here
    ds_raised: float = 0.5
    d_steps_per_g: int = 1
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("iterations", "batch_size", "checkpoint_interval", "d_steps_per_g"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr_decay_step", "ds_raise_step"):
            val = getattr(self, name)
            if val is not None and not 0 <= val <= self.iterations:
                raise ValidationError(f"{name} must lie in [0, iterations], got {val}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def effective_lambda(self, step: int) -> float:
        if self.ds_raise_step is not None and step >= self.ds_raise_step:
            return self.ds_raised
        return self.weights.lambda_ds

    def effective_lr(self, step: int) -> float:
        if self.lr_decay_step is not None and step >= self.lr_decay_step:
            return self.lr_decayed
        return self.lr


def _check_finite(value: float, term: str, step: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"{term} became non-finite at step {step}")
    return value


def params_digest(named: dict) -> str:
    """Order-independent content hash of a named parameter dict."""
    h = hashlib.sha256()
    for name in sorted(named):
        h.update(name.encode())
        h.update(np.ascontiguousarray(named[name].numpy()).tobytes())
    return h.hexdigest()


# -- checkpoint packing -----------------------------------------------------


def _spec_meta(spec) -> dict:
    out = {}
    for f in dataclasses.fields(spec):
        val = getattr(spec, f.name)
        out[f.name] = list(val) if isinstance(val, tuple) else val
    return out


def _spec_from_meta(cls, payload: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in payload:
            val = payload[f.name]
            kwargs[f.name] = tuple(val) if isinstance(val, list) else val
    return cls(**kwargs)


def _namespaced(prefix: str, named: dict) -> dict:
    return {prefix + k: v for k, v in named.items()}


def _select_ns(ckpt: Checkpoint, prefix: str) -> dict:
    return {k[len(prefix) :]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)}


def _load_named(named: dict, stored: dict, what: str):
    missing = sorted(set(named) - set(stored))
    extra = sorted(set(stored) - set(named))
    if missing or extra:
        raise ContractError(
            f"{what} parameters disagree with checkpoint (missing {missing[:3]}, extra {extra[:3]})"
        )
    for k, p in named.items():
        if stored[k].shape != p.shape:
            raise ContractError(f"{what} tensor {k!r}: shape {stored[k].shape} != {p.shape}")
        p.data[...] = stored[k]


DISC_META_KEYS = ("resolution", "channels", "num_domains", "dense_width")


def gan_to_checkpoint(
    spec: GeneratorSpec, gen: GeneratorParams, disc: ConvStackParams, disc_meta: dict, step: int
) -> Checkpoint:
    tensors = {}
    tensors.update(_namespaced("gen/", generator_parameters(gen)))
    tensors.update(_namespaced("disc/", conv_stack_parameters(disc)))
    meta = {
        "kind": "gan",
        "step": step,
        "generator_spec": _spec_meta(spec),
        "disc": {k: disc_meta[k] for k in DISC_META_KEYS},
    }
    return Checkpoint(tensors=tensors, meta=meta)


def gan_from_checkpoint(ckpt: Checkpoint):
    """Rebuild (spec, generator, discriminator, disc_meta) from a checkpoint."""
    if not ckpt.meta or ckpt.meta.get("kind") != "gan":
        raise ContractError("checkpoint does not hold a generator/discriminator pair")
    spec = _spec_from_meta(GeneratorSpec, ckpt.meta["generator_spec"])
    dm = dict(ckpt.meta["disc"])
    dm["channels"] = tuple(dm["channels"])
    rng = np.random.default_rng(0)  # values are overwritten below
    gen = make_generator(rng, spec)
    disc = make_discriminator(rng, dm["resolution"], dm["channels"], dm["num_domains"], dm["dense_width"])
    _load_named(generator_parameters(gen), _select_ns(ckpt, "gen/"), "generator")
    _load_named(conv_stack_parameters(disc), _select_ns(ckpt, "disc/"), "discriminator")
    return spec, gen, disc, dm


# -- adversarial training ---------------------------------------------------


@dataclass
class GanTrainResult:
    spec: GeneratorSpec
    generator: GeneratorParams
    discriminator: ConvStackParams
    disc_meta: dict
    rows: list  # (step, loss_g, loss_d, loss_ds, r1, effective_lambda)
    checkpoint: Checkpoint

    def csv(self) -> str:
        lines = [GAN_CSV_HEADER]
        for step, lg, ld, lds, r1, lam in self.rows:
            lines.append(f"{step},{lg:.8g},{ld:.8g},{lds:.8g},{r1:.8g},{lam:.8g}")
        return "\n".join(lines) + "\n"


def _map_style_per_domain(params: GeneratorParams, z: Tensor, dom: np.ndarray) -> Tensor:
    """Route each row of z through its domain's style mapping."""
    nets = params.style_mappings
    if len(nets) == 1:
        return mapping_forward(z, nets[0])
    out = None
    n = z.shape[0]
    for d, net in enumerate(nets):
        mask = Tensor((dom == d).astype(np.float64).reshape(n, 1))
        term = mapping_forward(z, net) * mask
        out = term if out is None else out + term
    return out


def _sample_codes(rng, spec: GeneratorSpec, params: GeneratorParams, n: int):
    z_s = Tensor(rng.standard_normal((n, spec.dim_z_s)))
    dom = rng.integers(0, spec.num_style_domains, n)
    s = _map_style_per_domain(params, z_s, dom)
    z_c = Tensor(rng.standard_normal((n, spec.dim_z_c)))
    c = mapping_forward(z_c, params.content_mapping)
    return s, c, dom


def _sample_noise(rng, spec: GeneratorSpec, n: int):
    """Per-site (N,1,H,W) noise for training passes; None when disabled."""
    if not spec.use_pixel_noise:
        return None
    return [
        Tensor(rng.standard_normal((n, 1, spec.site_resolution(k), spec.site_resolution(k))))
        for k in range(spec.n_sites)
    ]


def train_gan(
    config: TrainConfig,
    images: Tensor,
    spec: GeneratorSpec | None = None,
    domains: np.ndarray | None = None,
    run_dir: str | None = None,
    disc_channels: tuple | None = None,
    disc_dense_width: int = 64,
) -> GanTrainResult:
    """Alternating discriminator/generator updates on an image set.

    Each generator step draws one style code and two content codes; the
    two generations share the style, feed the diversity hinge, and the
    first also carries the adversarial term. Checkpoints go to
    {run_dir}/{step}.dgan when run_dir is given.
    """
    spec = spec or GeneratorSpec()
    res = spec.resolutions[-1]
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != res:
        raise ContractError(f"images must be N,3,{res},{res}, got {images.shape}")
    if images.shape[0] < 1:
        raise ContractError("dataset is empty")
    n_dom = spec.num_style_domains
    if domains is not None:
        domains = np.asarray(domains)
        if domains.shape != (images.shape[0],):
            raise DimensionError("domain labels must align with images", domains.shape, images.shape)
        if domains.size and (domains.min() < 0 or domains.max() >= n_dom):
            raise ContractError(f"domain labels must lie in [0, {n_dom})")

    if disc_channels is None:
        disc_channels = tuple(reversed(spec.channels))
    rng_init = make_rng(config.seed, "init")
    gen = make_generator(rng_init, spec)
    disc = make_discriminator(make_rng(config.seed, "disc"), res, disc_channels, n_dom, disc_dense_width)
    disc_meta = {
        "resolution": res,
        "channels": list(disc_channels),
        "num_domains": n_dom,
        "dense_width": disc_dense_width,
    }
    gen_named = generator_parameters(gen)
    disc_named = conv_stack_parameters(disc)
    g_state = AdamState(lr=config.lr)
    d_state = AdamState(lr=config.lr)

    stream = batch_stream(images, make_rng(config.seed, "data"), config.batch_size)
    rng_lat = make_rng(config.seed, "latent")
    gamma = config.weights.gamma_r1
    rows = []
    last_ckpt = None

    for step in range(1, config.iterations + 1):
        lr = config.effective_lr(step)
        lam = config.effective_lambda(step)
        d_state.lr = lr
        g_state.lr = lr if config.g_lr is None else config.g_lr

        loss_d_val = r1_val = 0.0
        for _ in range(config.d_steps_per_g):
            batch, idx = next(stream)
            real = Tensor(batch, requires_grad=True)
            y = domains[idx] if domains is not None else None
            with T.no_grad():
                s, c, dom = _sample_codes(rng_lat, spec, gen, config.batch_size)
                fake = generator_forward(
                    spec,
                    gen,
                    LayerCodes.shared(s, c, spec.n_sites),
                    noise=_sample_noise(rng_lat, spec, config.batch_size),
                )
            fake = Tensor(fake.numpy())
            real_score = discriminator_forward(real, disc, domain=y)
            fake_score = discriminator_forward(fake, disc, domain=dom if domains is not None else None)
            data_terms = adv_loss_d(real_score, fake_score, real, gamma=0.0)
            if gamma > 0:
                r1 = r1_penalty(real_score, real, gamma)
                loss_d = data_terms + r1
                r1_val = _check_finite(r1.item(), "R1 penalty", step)
            else:
                loss_d = data_terms
                r1_val = 0.0
            loss_d_val = _check_finite(loss_d.item(), "discriminator loss", step)
            adam_step(disc_named, backward(loss_d), d_state)

        s, c1, dom = _sample_codes(rng_lat, spec, gen, config.batch_size)
        z_c2 = Tensor(rng_lat.standard_normal((config.batch_size, spec.dim_z_c)))
        c2 = mapping_forward(z_c2, gen.content_mapping)
        # the diversity pair shares one noise draw so the hinge sees only
        # the content difference
        g_noise = _sample_noise(rng_lat, spec, config.batch_size)
        fake1 = generator_forward(spec, gen, LayerCodes.shared(s, c1, spec.n_sites), noise=g_noise)
        fake2 = generator_forward(spec, gen, LayerCodes.shared(s, c2, spec.n_sites), noise=g_noise)
        score = discriminator_forward(fake1, disc, domain=dom if domains is not None else None)
        adv = adv_loss_g(score)
        ds = ds_loss(fake1, fake2, lam)
        loss_g = adv + ds
        ds_val = _check_finite(ds.item(), "diversity loss", step)
        loss_g_val = _check_finite(loss_g.item(), "generator loss", step)
        gmap = backward(loss_g)
        adam_step(gen_named, gmap, g_state)

        rows.append((step, loss_g_val, loss_d_val, ds_val, r1_val, lam))

        if run_dir is not None and (step % config.checkpoint_interval == 0 or step == config.iterations):
            last_ckpt = gan_to_checkpoint(spec, gen, disc, disc_meta, step)
            save_checkpoint(last_ckpt, os.path.join(run_dir, f"{step}.dgan"))

    if last_ckpt is None:
        last_ckpt = gan_to_checkpoint(spec, gen, disc, disc_meta, config.iterations)
    result = GanTrainResult(
        spec=spec, generator=gen, discriminator=disc, disc_meta=disc_meta, rows=rows, checkpoint=last_ckpt
    )
    if run_dir is not None:
        with open(os.path.join(run_dir, "loss.csv"), "w") as fh:
            fh.write(result.csv())
    return result


# -- encoder (inversion) training -------------------------------------------


@dataclass
class InversionModel:
    """Frozen generator plus trained encoders and a fresh critic."""

    spec: GeneratorSpec
    generator: GeneratorParams
    se_spec: EncoderSpec
    se: ConvStackParams
    ce_spec: EncoderSpec
    ce: ConvStackParams
    disc: ConvStackParams
    disc_meta: dict

    def encode_style(self, x: Tensor, domain=None) -> Tensor:
        return encoder_forward(x, self.se_spec, self.se, domain=domain)

    def encode_content(self, x: Tensor) -> Tensor:
        return encoder_forward(x, self.ce_spec, self.ce)

    def synthesize(self, s: Tensor, c: Tensor) -> Tensor:
        return generator_forward(self.spec, self.generator, LayerCodes.shared(s, c, self.spec.n_sites))


def inversion_to_checkpoint(model: InversionModel, step: int) -> Checkpoint:
    tensors = {}
    tensors.update(_namespaced("gen/", generator_parameters(model.generator)))
    tensors.update(_namespaced("se/", conv_stack_parameters(model.se)))
    tensors.update(_namespaced("ce/", conv_stack_parameters(model.ce)))
    tensors.update(_namespaced("disc/", conv_stack_parameters(model.disc)))
    meta = {
        "kind": "inversion",
        "step": step,
        "generator_spec": _spec_meta(model.spec),
        "se_spec": _spec_meta(model.se_spec),
        "ce_spec": _spec_meta(model.ce_spec),
        "disc": {k: model.disc_meta[k] for k in DISC_META_KEYS},
    }
    return Checkpoint(tensors=tensors, meta=meta)


def inversion_from_checkpoint(ckpt: Checkpoint) -> InversionModel:
    if not ckpt.meta or ckpt.meta.get("kind") != "inversion":
        raise ContractError("checkpoint does not hold an inversion model")
    spec = _spec_from_meta(GeneratorSpec, ckpt.meta["generator_spec"])
    se_spec = _spec_from_meta(EncoderSpec, ckpt.meta["se_spec"])
    ce_spec = _spec_from_meta(EncoderSpec, ckpt.meta["ce_spec"])
    dm = dict(ckpt.meta["disc"])
    dm["channels"] = tuple(dm["channels"])
    rng = np.random.default_rng(0)
    model = InversionModel(
        spec=spec,
        generator=make_generator(rng, spec),
        se_spec=se_spec,
        se=make_encoder(rng, se_spec),
        ce_spec=ce_spec,
        ce=make_encoder(rng, ce_spec),
        disc=make_discriminator(rng, dm["resolution"], dm["channels"], dm["num_domains"], dm["dense_width"]),
        disc_meta=dm,
    )
    _load_named(generator_parameters(model.generator), _select_ns(ckpt, "gen/"), "generator")
    _load_named(conv_stack_parameters(model.se), _select_ns(ckpt, "se/"), "style encoder")
    _load_named(conv_stack_parameters(model.ce), _select_ns(ckpt, "ce/"), "content encoder")
    _load_named(conv_stack_parameters(model.disc), _select_ns(ckpt, "disc/"), "discriminator")
    return model


@dataclass
class InversionTrainResult:
    model: InversionModel
    rows: list  # (step, loss_e, loss_latent, loss_rec, loss_d, lambda_lat, lambda_adv)
    checkpoint: Checkpoint

    def csv(self) -> str:
        lines = [INVERSION_CSV_HEADER]
        for step, le, ll, lr_, ld, llat, ladv in self.rows:
            lines.append(f"{step},{le:.8g},{ll:.8g},{lr_:.8g},{ld:.8g},{llat:.8g},{ladv:.8g}")
        return "\n".join(lines) + "\n"


def train_inversion(
    config: TrainConfig,
    pretrained: Checkpoint,
    images: Tensor,
    domains: np.ndarray,
    run_dir: str | None = None,
    encoder_channels: tuple | None = None,
) -> InversionTrainResult:
    """Fit style/content encoders to a frozen pretrained generator.

    Per iteration: a synthetic branch generates images from known codes
    and pulls the encoder outputs toward those codes; a real branch
    encodes data, reconstructs through the frozen generator, and pays
    reconstruction + latent + adversarial terms. A fresh discriminator
    trains alongside on real vs reconstruction. The generator (and its
    mapping networks) never change; this is verified by content hash.
    """
    spec, gen, _, _ = gan_from_checkpoint(pretrained)
    res = spec.resolutions[-1]
    if encoder_channels is None:
        encoder_channels = tuple(reversed(spec.channels))
    if images.ndim != 4 or images.shape[2] != res:
        raise ContractError(f"images must be N,3,{res},{res}, got {images.shape}")
    domains = np.asarray(domains)
    if domains.shape != (images.shape[0],):
        raise DimensionError("domain labels must align with images", domains.shape, images.shape)
    n_dom = spec.num_style_domains
    if domains.size and (domains.min() < 0 or domains.max() >= n_dom):
        raise ContractError(f"domain label out of range: style mappings cover [0, {n_dom})")

    rng_init = make_rng(config.seed, "inv-init")
    se_spec = EncoderSpec(
        resolution=res, channels=encoder_channels, head_count=n_dom, out_dim=spec.dim_s
    )
    ce_spec = EncoderSpec(resolution=res, channels=encoder_channels, head_count=1, out_dim=spec.dim_c)
    se = make_encoder(rng_init, se_spec)
    ce = make_encoder(rng_init, ce_spec)
    disc = make_discriminator(make_rng(config.seed, "inv-disc"), res, encoder_channels, n_dom)
    disc_meta = {
        "resolution": res,
        "channels": list(encoder_channels),
        "num_domains": n_dom,
        "dense_width": 64,
    }
    model = InversionModel(
        spec=spec, generator=gen, se_spec=se_spec, se=se, ce_spec=ce_spec, ce=ce,
        disc=disc, disc_meta=disc_meta,
    )

    gen_named = generator_parameters(gen)
    frozen_digest = params_digest(gen_named)
    enc_named = {}
    enc_named.update(_namespaced("se/", conv_stack_parameters(se)))
    enc_named.update(_namespaced("ce/", conv_stack_parameters(ce)))
    disc_named = conv_stack_parameters(disc)
    e_state = AdamState(lr=config.lr)
    d_state = AdamState(lr=config.lr)

    stream = batch_stream(images, make_rng(config.seed, "inv-data"), config.batch_size)
    rng_lat = make_rng(config.seed, "inv-latent")
    w = config.weights
    rows = []
    last_ckpt = None

    for step in range(1, config.iterations + 1):
        lr = config.effective_lr(step)
        e_state.lr = lr
        d_state.lr = lr

        # synthetic branch: known codes -> image -> encoders
        nb = config.batch_size
        with T.no_grad():
            s_true, c_true, dom_f = _sample_codes(rng_lat, spec, gen, nb)
            x_fake = generator_forward(spec, gen, LayerCodes.shared(s_true, c_true, spec.n_sites))
        x_fake = Tensor(x_fake.numpy())
        s_f = model.encode_style(x_fake, domain=dom_f)
        c_f = model.encode_content(x_fake)
        l_lat = inversion_latent_loss(s_true.numpy(), s_f, c_true.numpy(), c_f, squared=w.squared_latent)

        # real branch: encode -> reconstruct through the frozen generator
        batch, idx = next(stream)
        x_real = Tensor(batch)
        y = domains[idx]
        s_r = model.encode_style(x_real, domain=y)
        c_r = model.encode_content(x_real)
        x_rec = model.synthesize(s_r, c_r)
        score = discriminator_forward(x_rec, disc, domain=y)
        loss_e = inversion_encoder_loss(x_real, x_rec, l_lat, score, w)
        l_lat_val = _check_finite(l_lat.item(), "latent consistency loss", step)
        loss_e_val = _check_finite(loss_e.item(), "encoder loss", step)
        rec_val = _check_finite(
            float(np.mean((batch - x_rec.numpy()) ** 2)), "reconstruction loss", step
        )
        adam_step(enc_named, backward(loss_e), e_state)

        # critic: real vs detached reconstruction
        real_t = Tensor(batch, requires_grad=True)
        rec_const = Tensor(x_rec.numpy())
        real_score = discriminator_forward(real_t, disc, domain=y)
        rec_score = discriminator_forward(rec_const, disc, domain=y)
        loss_d = adv_loss_d(real_score, rec_score, real_t, gamma=w.gamma_r1)
        loss_d_val = _check_finite(loss_d.item(), "inversion discriminator loss", step)
        adam_step(disc_named, backward(loss_d), d_state)

        rows.append((step, loss_e_val, l_lat_val, rec_val, loss_d_val, w.lambda_lat, w.lambda_adv))

        if run_dir is not None and (step % config.checkpoint_interval == 0 or step == config.iterations):
            last_ckpt = inversion_to_checkpoint(model, step)
            save_checkpoint(last_ckpt, os.path.join(run_dir, f"{step}.dgan"))

    if params_digest(gen_named) != frozen_digest:
        raise ContractError("frozen generator parameters changed during encoder training")
    if last_ckpt is None:
        last_ckpt = inversion_to_checkpoint(model, config.iterations)
    result = InversionTrainResult(model=model, rows=rows, checkpoint=last_ckpt)
    if run_dir is not None:
        with open(os.path.join(run_dir, "loss.csv"), "w") as fh:
            fh.write(result.csv())
    return result


# -- per-image latent fitting -----------------------------------------------


def optimize_latents(
    x_real,
    domain: int,
    model,
    steps: int = 100,
    lr: float = 0.01,
    lambda_reg: float = 2.0,
    perceptual_fn=None,
):
    """Fit (style, content) codes to one image by gradient descent.

    model provides synthesize(s, c), encode_style(x, domain=...), and
    encode_content(x); the encoders seed the initial codes and anchor
    the consistency terms. Returns (s, c, trace) where trace[i] is the
    objective value entering step i.
    """
    x = x_real if isinstance(x_real, Tensor) else Tensor(np.asarray(x_real, dtype=np.float64))
    if x.ndim == 3:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[0] != 1:
        raise ContractError(f"expected one 3,H,W image, got {x.shape}")
    if steps < 1:
        raise ValidationError(f"steps must be positive, got {steps}")

    def enc_s(img):
        return model.encode_style(img, domain=domain)

    with T.no_grad():
        s = Tensor(enc_s(x).numpy(), requires_grad=True)
        c = Tensor(model.encode_content(x).numpy(), requires_grad=True)
    named = {"s": s, "c": c}
    state = AdamState(lr=lr)
    trace = []
    for i in range(steps):
        loss = latent_opt_loss(
            s, c, x, model.synthesize, enc_s, model.encode_content, lambda_reg, perceptual_fn
        )
        val = loss.item()
        if not math.isfinite(val):
            raise NumericError(f"latent fitting diverged at step {i}")
        trace.append(val)
        adam_step(named, backward(loss), state)
    return s, c, trace
