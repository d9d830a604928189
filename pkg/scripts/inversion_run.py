#!/usr/bin/env python3
"""End-to-end inversion study at desk scale.

Trains a small generator on the synthetic ellipse set, fits encoders
against it frozen, then inverts held-out dataset images two ways:
encoder pass alone, and encoder init plus latent optimization. Reports
per-image reconstruction error for both, which shows how much the
optimization stage recovers on top of the encoders.
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import dgan.tensor as T
from dgan.data import SynthSpec, synth_dataset
from dgan.io import load_checkpoint
from dgan.losses import mse
from dgan.networks import GeneratorSpec
from dgan.tensor import Tensor
from dgan.training import (
    TrainConfig,
    inversion_from_checkpoint,
    optimize_latents,
    train_gan,
    train_inversion,
)


def small_spec() -> GeneratorSpec:
    return GeneratorSpec(
        resolutions=(4, 8, 16),
        channels=(24, 24, 16),
        dim_z_s=16,
        dim_z_c=16,
        dim_s=16,
        dim_c=16,
        mapping_depth=2,
        dat_max_resolution=16,
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--gan-iters", type=int, default=300)
    ap.add_argument("--enc-iters", type=int, default=200)
    ap.add_argument("--images", type=int, default=8, help="held-out images to invert")
    ap.add_argument("--steps", type=int, default=100, help="optimization steps per image")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="inversion_runs")
    args = ap.parse_args()

    spec = small_spec()
    train_imgs, _ = synth_dataset(SynthSpec(resolution=16, n_images=256, seed=50))
    held_imgs, _ = synth_dataset(SynthSpec(resolution=16, n_images=args.images, seed=51))

    gan_dir = os.path.join(args.out, "gan")
    gan_final = os.path.join(gan_dir, f"{args.gan_iters}.dgan")
    if not os.path.exists(gan_final):
        t0 = time.time()
        train_gan(
            TrainConfig(
                iterations=args.gan_iters,
                batch_size=8,
                seed=args.seed,
                checkpoint_interval=args.gan_iters,
            ),
            train_imgs,
            spec=spec,
            run_dir=gan_dir,
        )
        print(f"generator trained in {time.time() - t0:.0f}s", flush=True)

    enc_dir = os.path.join(args.out, "enc")
    enc_final = os.path.join(enc_dir, f"{args.enc_iters}.dgan")
    if not os.path.exists(enc_final):
        t0 = time.time()
        train_inversion(
            TrainConfig(
                iterations=args.enc_iters,
                batch_size=8,
                seed=args.seed + 1,
                checkpoint_interval=args.enc_iters,
            ),
            load_checkpoint(gan_final),
            train_imgs,
            np.zeros(train_imgs.shape[0], dtype=np.int64),
            run_dir=enc_dir,
        )
        print(f"encoders trained in {time.time() - t0:.0f}s", flush=True)

    model = inversion_from_checkpoint(load_checkpoint(enc_final))
    held = held_imgs.numpy()
    enc_errs, opt_errs = [], []
    for i in range(held.shape[0]):
        x = Tensor(held[i : i + 1])
        with T.no_grad():
            s0 = model.encode_style(x, domain=0)
            c0 = model.encode_content(x)
            e_enc = mse(x, model.synthesize(s0, c0)).item()
        s1, c1, trace = optimize_latents(x, 0, model, steps=args.steps)
        with T.no_grad():
            e_opt = mse(x, model.synthesize(s1, c1)).item()
        enc_errs.append(e_enc)
        opt_errs.append(e_opt)
        print(
            f"image {i}: encoder mse {e_enc:.5f} -> optimized {e_opt:.5f} "
            f"(objective {trace[0]:.4f} -> {trace[-1]:.4f})",
            flush=True,
        )

    improved = sum(o < e for o, e in zip(opt_errs, enc_errs))
    print(
        f"mean encoder mse {np.mean(enc_errs):.5f}, mean optimized mse {np.mean(opt_errs):.5f}, "
        f"{improved}/{len(enc_errs)} images improved"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
