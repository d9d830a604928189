"""Command-line surface.

Subcommands: synth-data, train, train-invert, sample, interpolate,
attn-edit, metrics, invert. Every run is deterministic given --seed:
each consumer of randomness derives its own stream from (seed, label),
so adding a consumer never shifts the others.

Exit codes: 0 success; 2 usage; 3 validation/contract failure;
4 numeric failure; 5 I/O or file-format failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .data import SynthSpec, synth_dataset
from .errors import ContractError, DimensionError, FormatError, NumericError, ValidationError
from .io import image_read, image_write, load_checkpoint, load_config, write_grid
from .losses import mse
from .metrics import (
    METRIC_CSV_HEADER,
    FeatureExtractor,
    PPLConfig,
    diversity_score,
    feature_stats,
    format_metric_row,
    frechet_distance,
    ppl,
)
from .networks import GeneratorHandle, LayerCodes, generator_forward, truncate
from .seeds import derive_seed, make_rng
from .tensor import Tensor
from .training import (
    TrainConfig,
    gan_from_checkpoint,
    inversion_from_checkpoint,
    optimize_latents,
    train_gan,
    train_inversion,
)


def _load_gan_handle(path: str, domain: int = 0):
    ckpt = load_checkpoint(path)
    spec, gen, disc, disc_meta = gan_from_checkpoint(ckpt)
    return ckpt, spec, gen, disc, disc_meta, GeneratorHandle(spec, gen, domain=domain)


def _truncated_styles(handle: GeneratorHandle, rng_s, rng_mean, n: int, psi: float) -> Tensor:
    s = handle.sample_style(rng_s, n)
    if psi >= 1.0:
        return s
    mean = handle.style_mean(rng_mean)
    return truncate(s, psi, mean)


def _repeat_rows(row: Tensor, n: int) -> Tensor:
    return T.reshape(row, (1, row.shape[1])) * Tensor(np.ones((n, 1)))


def _strip(images: np.ndarray, path: str):
    """Write N,3,H,W side by side as one horizontal strip."""
    image_write(np.concatenate(list(images), axis=2), path)


# -- subcommands ------------------------------------------------------------


def cmd_synth_data(args) -> int:
    spec = SynthSpec(
        resolution=args.resolution,
        n_images=args.n,
        seed=args.seed,
        single_domain=args.domain,
    )
    images, table = synth_dataset(spec)
    os.makedirs(args.out, exist_ok=True)
    n_show = min(args.n, 64)
    write_grid(images.numpy()[:n_show], os.path.join(args.out, "preview.png"))
    with open(os.path.join(args.out, "factors.csv"), "w") as fh:
        fh.write("index,center_x,center_y,rotation,axis_ratio,fg_hue,bg_hue,domain\n")
        for i in range(args.n):
            fh.write(
                f"{i},{table.center_x[i]:.8g},{table.center_y[i]:.8g},"
                f"{table.rotation[i]:.8g},{table.axis_ratio[i]:.8g},"
                f"{table.fg_hue[i]:.8g},{table.bg_hue[i]:.8g},{table.domain[i]}\n"
            )
    print(f"wrote {args.n} factors and a {n_show}-image preview to {args.out}")
    return 0


def _apply_train_overrides(cfg: TrainConfig, args) -> TrainConfig:
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.batch_size is not None:
        cfg.batch_size = args.batch_size
    if args.lambda_ds is not None:
        cfg.weights.lambda_ds = args.lambda_ds
    cfg.seed = args.seed
    cfg.__post_init__()
    return cfg


def cmd_train(args) -> int:
    bundle = load_config(args.config)
    cfg = _apply_train_overrides(bundle.train, args)
    synth = bundle.synth
    synth.seed = derive_seed(args.seed, "dataset")
    images, table = synth_dataset(synth)
    gen_spec = bundle.generator
    domains = table.domain if gen_spec.num_style_domains > 1 else None
    result = train_gan(cfg, images, spec=gen_spec, domains=domains, run_dir=args.out)
    last = result.rows[-1]
    print(
        f"trained {cfg.iterations} steps; final loss_g={last[1]:.4f} "
        f"loss_d={last[2]:.4f}; checkpoints in {args.out}"
    )
    return 0


def cmd_train_invert(args) -> int:
    bundle = load_config(args.config)
    cfg = _apply_train_overrides(bundle.train, args)
    pretrained = load_checkpoint(args.gan)
    synth = bundle.synth
    synth.seed = derive_seed(args.seed, "dataset")
    images, table = synth_dataset(synth)
    n_dom = 1
    if pretrained.meta and "generator_spec" in pretrained.meta:
        n_dom = pretrained.meta["generator_spec"].get("num_style_domains", 1)
    labels = table.domain if n_dom > 1 else np.zeros(images.shape[0], dtype=int)
    result = train_inversion(cfg, pretrained, images, labels, run_dir=args.out)
    last = result.rows[-1]
    print(
        f"trained encoders {cfg.iterations} steps; final loss_e={last[1]:.4f} "
        f"(lambda_lat={last[5]}, lambda_adv={last[6]}); checkpoints in {args.out}"
    )
    return 0


def cmd_sample(args) -> int:
    _, spec, gen, _, _, handle = _load_gan_handle(args.ckpt, domain=args.domain)
    n = args.n
    rng_s = make_rng(args.seed, "sample-style")
    rng_c = make_rng(args.seed, "sample-content")
    rng_mean = make_rng(args.seed, "style-mean")

    styles = _truncated_styles(handle, rng_s, rng_mean, n, args.psi)
    contents = handle.sample_content(rng_c, n)
    if args.mode in ("vary-content", "fixed"):
        styles = _repeat_rows(Tensor(styles.numpy()[0:1]), n)
    if args.mode in ("vary-style", "fixed"):
        contents = _repeat_rows(Tensor(contents.numpy()[0:1]), n)

    images = handle.synthesize(styles, contents)
    rows, cols = write_grid(images.numpy(), args.out)
    print(f"wrote {rows}x{cols} {args.mode} grid to {args.out}")
    return 0


def _parse_space(space: str, n_sites: int):
    if space == "all":
        return list(range(n_sites))
    if space.startswith("layer:"):
        try:
            k = int(space[len("layer:") :])
        except ValueError:
            raise ValidationError(f"bad layer index in {space!r}") from None
        if not 0 <= k < n_sites:
            raise ContractError(f"layer {k} out of range [0, {n_sites})")
        return [k]
    raise ValidationError(f"space must be 'all' or 'layer:K', got {space!r}")


def cmd_interpolate(args) -> int:
    _, spec, gen, _, _, handle = _load_gan_handle(args.ckpt, domain=args.domain)
    if args.steps < 2:
        raise ValidationError(f"steps must be >= 2, got {args.steps}")
    sites = _parse_space(args.space, spec.n_sites)

    rng_s = make_rng(args.seed, "sample-style")
    rng_c = make_rng(args.seed, "sample-content")
    rng_mean = make_rng(args.seed, "style-mean")
    style = _truncated_styles(handle, rng_s, rng_mean, 1, args.psi)
    c_a = handle.sample_content(rng_c, 1)
    c_b = handle.sample_content(rng_c, 1)

    frames = []
    for i in range(args.steps):
        t = i / (args.steps - 1)
        blend = (1.0 - t) * c_a + t * c_b  # exact endpoints at t=0 and t=1
        codes = LayerCodes.shared(style, c_a, spec.n_sites)
        for site in sites:
            codes = codes.replace_content(site, blend)
        with T.no_grad():
            frames.append(generator_forward(spec, gen, codes).numpy()[0])
    _strip(np.stack(frames), args.out)
    print(f"wrote {args.steps}-frame interpolation ({args.space}) to {args.out}")
    return 0


def _parse_map(text: str, res: int) -> np.ndarray:
    grid_y, grid_x = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    named = {
        "zeros": np.zeros((res, res)),
        "ones": np.ones((res, res)),
        "left": (grid_x < res // 2).astype(float),
        "right": (grid_x >= res // 2).astype(float),
        "top": (grid_y < res // 2).astype(float),
        "bottom": (grid_y >= res // 2).astype(float),
    }
    if text in named:
        return named[text]
    if text.startswith("const:"):
        try:
            return np.full((res, res), float(text[len("const:") :]))
        except ValueError:
            raise ValidationError(f"bad constant in {text!r}") from None
    if os.path.exists(text):
        try:
            arr = np.loadtxt(text, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise FormatError(f"cannot parse map file {text}: {exc}") from exc
        return arr
    raise ValidationError(
        f"map {text!r} is neither a file nor one of zeros/ones/left/right/top/bottom/const:V"
    )


def cmd_attn_edit(args) -> int:
    _, spec, gen, _, _, handle = _load_gan_handle(args.ckpt, domain=args.domain)
    site = args.layer
    if not 0 <= site < spec.n_sites:
        raise ContractError(f"layer {site} out of range [0, {spec.n_sites})")
    res = spec.site_resolution(site)

    rng_s = make_rng(args.seed, "sample-style")
    rng_c = make_rng(args.seed, "sample-content")
    rng_mean = make_rng(args.seed, "style-mean")
    style = _truncated_styles(handle, rng_s, rng_mean, 1, args.psi)
    content = handle.sample_content(rng_c, 1)
    codes = LayerCodes.shared(style, content, spec.n_sites)

    trace: dict = {}
    with T.no_grad():
        baseline = generator_forward(spec, gen, codes, trace=trace)

    if args.map == "computed":
        if trace["attention_maps"][site] is None:
            raise ContractError(f"layer {site} has no attention gate")
        override = trace["attention_maps"][site]
    else:
        arr = _parse_map(args.map, res)
        if arr.shape != (res, res):
            raise ContractError(f"override for layer {site} must be {res}x{res}, got {arr.shape}")
        override = Tensor(arr)
    with T.no_grad():
        edited = generator_forward(spec, gen, codes, attn_override={site: override})

    _strip(np.stack([baseline.numpy()[0], edited.numpy()[0]]), args.out)
    diff = float(np.abs(baseline.numpy() - edited.numpy()).max())
    print(f"wrote baseline|edited strip to {args.out}; max pixel diff {diff:.6g}")
    return 0


def cmd_metrics(args) -> int:
    _, spec, gen, _, _, handle = _load_gan_handle(args.ckpt, domain=args.domain)
    extractor = FeatureExtractor(seed=derive_seed(args.seed, "features"))
    rows = []
    if args.which.startswith("ppl-"):
        mode = {"ppl-w": "W", "ppl-ws": "Ws", "ppl-wc": "Wc"}[args.which]
        cfg = PPLConfig(mode=mode, eps=args.eps, n_samples=args.budget)
        value = ppl(handle, cfg, seed=derive_seed(args.seed, "ppl"), extractor=extractor)
        rows.append(format_metric_row("ppl", mode, value, args.budget, args.seed))
    elif args.which == "fid-proxy":
        synth = SynthSpec(
            resolution=spec.resolutions[-1],
            n_images=args.budget,
            seed=derive_seed(args.seed, "dataset"),
        )
        real, _ = synth_dataset(synth)
        rng = make_rng(args.seed, "fid-samples")
        chunks = []
        with T.no_grad():
            for start in range(0, args.budget, 64):
                m = min(64, args.budget - start)
                img = handle.synthesize(handle.sample_style(rng, m), handle.sample_content(rng, m))
                chunks.append(img.numpy())
        fake = Tensor(np.concatenate(chunks, axis=0))
        value = frechet_distance(feature_stats(real, extractor), feature_stats(fake, extractor))
        rows.append(format_metric_row("fid_proxy", "vs_synth", value, args.budget, args.seed))
    else:  # diversity
        for mode in ("content_only", "style_only"):
            value = diversity_score(
                handle, mode=mode, seed=derive_seed(args.seed, "diversity"), extractor=extractor
            )
            rows.append(format_metric_row("diversity", mode, value, 5 * 8, args.seed))

    fresh = not (os.path.exists(args.out) and os.path.getsize(args.out) > 0)
    with open(args.out, "a") as fh:
        if fresh:
            fh.write(METRIC_CSV_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    for row in rows:
        print(row)
    return 0


def cmd_invert(args) -> int:
    model = inversion_from_checkpoint(load_checkpoint(args.enc))
    if args.gen is not None:
        spec, gen, _, _ = gan_from_checkpoint(load_checkpoint(args.gen))
        if spec != model.spec:
            raise ContractError("generator checkpoint spec disagrees with encoder checkpoint")
        model.generator = gen
    res = model.spec.resolutions[-1]
    x = image_read(args.image)
    if x.shape != (3, res, res):
        raise ContractError(f"image must be 3x{res}x{res} for this generator, got {x.shape}")
    x4 = T.reshape(x, (1, 3, res, res))

    with T.no_grad():
        s0 = model.encode_style(x4, domain=args.domain)
        c0 = model.encode_content(x4)
        rec0 = model.synthesize(s0, c0)
    mse0 = mse(x4, rec0).item()

    os.makedirs(args.out, exist_ok=True)
    image_write(rec0.numpy()[0], os.path.join(args.out, "reconstruction.png"))

    trace: list = []
    s_fin, c_fin, mse1 = s0, c0, mse0
    if args.optimize:
        s_fin, c_fin, trace = optimize_latents(
            x4, args.domain, model, steps=args.steps, lr=args.lr, lambda_reg=args.lambda_reg
        )
        with T.no_grad():
            rec1 = model.synthesize(s_fin, c_fin)
        mse1 = mse(x4, rec1).item()
        image_write(rec1.numpy()[0], os.path.join(args.out, "optimized.png"))

    with open(os.path.join(args.out, "codes.csv"), "w") as fh:
        fh.write("code,index,value\n")
        for name, vec in (("style", s_fin), ("content", c_fin)):
            flat = vec.numpy().reshape(-1)
            for i, v in enumerate(flat):
                fh.write(f"{name},{i},{v:.12g}\n")
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write("mse_encoder,mse_optimized,opt_steps\n")
        fh.write(f"{mse0:.12g},{mse1:.12g},{len(trace)}\n")
    print(f"encoder MSE {mse0:.6g}; optimized MSE {mse1:.6g}; trace length {len(trace)}")
    return 0


# -- wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgan",
        description="Content/style generative laboratory on synthetic data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=0, help="master seed; all streams derive from it")
        return p

    p = add("synth-data", cmd_synth_data, "render the synthetic dataset and its factor table")
    p.add_argument("--resolution", type=int, default=32, help="image side length")
    p.add_argument("--n", type=int, default=256, help="number of images")
    p.add_argument("--domain", type=int, default=None, help="restrict to one style domain (0 or 1)")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", cmd_train, "adversarial training on the synthetic dataset")
    p.add_argument("--config", default=None, help="JSON config path")
    p.add_argument("--out", required=True, help="run directory for checkpoints and loss.csv")
    p.add_argument("--iterations", type=int, default=None, help="override config iterations")
    p.add_argument("--batch-size", type=int, default=None, help="override config batch size")
    p.add_argument("--lambda-ds", type=float, default=None, help="override diversity weight (config default 0.3)")

    p = add("train-invert", cmd_train_invert, "fit encoders to a frozen pretrained generator")
    p.add_argument("--gan", required=True, help="pretrained generator checkpoint")
    p.add_argument("--config", default=None, help="JSON config path")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--iterations", type=int, default=None, help="override config iterations")
    p.add_argument("--batch-size", type=int, default=None, help="override config batch size")
    p.add_argument("--lambda-ds", type=float, default=None, help=argparse.SUPPRESS)

    p = add("sample", cmd_sample, "sample an image grid from a checkpoint")
    p.add_argument("--ckpt", required=True, help="generator checkpoint")
    p.add_argument("--n", type=int, default=9, help="number of images")
    p.add_argument(
        "--mode",
        choices=("vary-style", "vary-content", "vary-both", "fixed"),
        default="vary-both",
        help="which codes vary across the grid",
    )
    p.add_argument("--psi", type=float, default=0.7, help="style truncation factor")
    p.add_argument("--domain", type=int, default=0, help="style domain")
    p.add_argument("--out", required=True, help="output PNG")

    p = add("interpolate", cmd_interpolate, "interpolate content codes, full or one layer")
    p.add_argument("--ckpt", required=True, help="generator checkpoint")
    p.add_argument("--space", default="all", help="'all' or 'layer:K' for one site")
    p.add_argument("--steps", type=int, default=8, help="frames in the strip")
    p.add_argument("--psi", type=float, default=0.7, help="style truncation factor")
    p.add_argument("--domain", type=int, default=0, help="style domain")
    p.add_argument("--out", required=True, help="output PNG strip")

    p = add("attn-edit", cmd_attn_edit, "override one layer's attention map")
    p.add_argument("--ckpt", required=True, help="generator checkpoint")
    p.add_argument("--layer", type=int, required=True, help="site index to edit")
    p.add_argument(
        "--map",
        default="zeros",
        help="override: zeros/ones/left/right/top/bottom/const:V/computed, or a CSV file",
    )
    p.add_argument("--psi", type=float, default=0.7, help="style truncation factor")
    p.add_argument("--domain", type=int, default=0, help="style domain")
    p.add_argument("--out", required=True, help="output PNG (baseline|edited)")

    p = add("metrics", cmd_metrics, "path length, distribution distance, diversity")
    p.add_argument("--ckpt", required=True, help="generator checkpoint")
    p.add_argument(
        "--which",
        choices=("ppl-w", "ppl-ws", "ppl-wc", "fid-proxy", "diversity"),
        required=True,
        help="metric to compute",
    )
    p.add_argument("--budget", type=int, default=1000, help="sample budget")
    p.add_argument("--eps", type=float, default=1e-4, help="interpolation step for path length")
    p.add_argument("--domain", type=int, default=0, help="style domain")
    p.add_argument("--out", required=True, help="CSV path (appends)")

    p = add("invert", cmd_invert, "encode an image into codes and reconstruct it")
    p.add_argument("--enc", required=True, help="inversion checkpoint (encoders + generator)")
    p.add_argument("--gen", default=None, help="optional generator checkpoint overriding the embedded one")
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--domain", type=int, default=0, help="style domain of the image")
    p.add_argument(
        "--optimize",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="refine codes by per-image optimization",
    )
    p.add_argument("--steps", type=int, default=100, help="optimization steps")
    p.add_argument("--lr", type=float, default=0.01, help="optimization learning rate")
    p.add_argument("--lambda-reg", type=float, default=2.0, help="code-consistency weight")
    p.add_argument("--out", required=True, help="output directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DimensionError, ContractError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (FormatError, OSError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
