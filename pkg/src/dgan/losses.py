"""Training objectives.

Adversarial terms use the non-saturating softplus form. The
discriminator additionally pays a gradient-norm penalty at real
samples, which needs the double-backward capability of the tensor
engine: the penalty is built from gradients that are themselves graph
nodes.

The diversity term pushes two generations that share a style but differ
in content at least a threshold apart in mean absolute pixel distance.
The threshold form max(lambda - dist, 0) caps both the loss and its
gradient once the images are far enough apart.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError, DimensionError
from . import tensor as T
from .tensor import Tensor, as_tensor, backward


@dataclass
class LossWeights:
    lambda_ds: float = 0.3
    gamma_r1: float = 10.0
    lambda_lat: float = 1.0
    lambda_adv: float = 0.1
    lambda_reg: float = 2.0
    squared_latent: bool = False  # True: squared norms instead of norms

    def __post_init__(self):
        for name in ("lambda_ds", "gamma_r1", "lambda_lat", "lambda_adv", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative, got {getattr(self, name)}")


def adv_loss_g(fake_score: Tensor) -> Tensor:
    """Generator wants high scores: mean softplus(-score)."""
    return T.tmean(T.softplus(-as_tensor(fake_score)))


def r1_penalty(real_score: Tensor, real_images: Tensor, gamma: float) -> Tensor:
    """(gamma/2) * mean over samples of ||d score / d image||^2.

    real_images must be a requires_grad node the scores were computed
    from; the per-sample gradients become part of the loss graph.
    """
    if gamma < 0:
        raise ContractError(f"gamma must be nonnegative, got {gamma}")
    if not real_images.requires_grad:
        raise ContractError("real_images must require grad for the penalty")
    n = real_images.shape[0]
    grads = backward(T.tsum(real_score), create_graph=True).get(real_images)
    if grads is None:
        raise ContractError("score does not depend on real_images")
    return (gamma / 2.0) * T.tsum(grads * grads) * (1.0 / n)


def adv_loss_d(real_score: Tensor, fake_score: Tensor, real_images: Tensor, gamma: float) -> Tensor:
    """mean softplus(-real) + mean softplus(fake) + R1 penalty."""
    if gamma < 0:
        raise ContractError(f"gamma must be nonnegative, got {gamma}")
    data_terms = T.tmean(T.softplus(-as_tensor(real_score))) + T.tmean(
        T.softplus(as_tensor(fake_score))
    )
    if gamma == 0:
        return data_terms
    return data_terms + r1_penalty(real_score, real_images, gamma)


def ds_loss(img1: Tensor, img2: Tensor, lam: float) -> Tensor:
    """max(lambda - meanAbs(img1 - img2), 0), hinged per pair then averaged.

    meanAbs normalizes by element count, so the same threshold works at
    any resolution. Inputs are (N, ...) batches; each pair is hinged
    before the batch average.
    """
    img1, img2 = as_tensor(img1), as_tensor(img2)
    if img1.shape != img2.shape:
        raise DimensionError("ds_loss images must share a shape", img1.shape, img2.shape)
    n = img1.shape[0]
    per_elem = img1.size // n
    dist = T.tsum(T.tabs(img1 - img2), axis=tuple(range(1, img1.ndim))) * (1.0 / per_elem)
    hinge = T.leaky_relu(lam - dist, 0.0)  # max(., 0)
    return T.tmean(hinge)


def total_loss_g(adv: Tensor, ds: Tensor) -> Tensor:
    return as_tensor(adv) + as_tensor(ds)


def _code_distance(a: Tensor, b: Tensor, squared: bool) -> Tensor:
    """Euclidean distance between codes; batch rows average.

    1-D inputs give a single vector distance. 2-D (N, dim) inputs give
    the mean of per-row distances. The 1e-24 shift keeps the sqrt
    differentiable at zero distance (gradient exactly 0 there).
    """
    if a.shape != b.shape:
        raise DimensionError("code shapes differ", a.shape, b.shape)
    diff = a - b
    if a.ndim <= 1:
        ss = T.tsum(diff * diff)
        return ss if squared else T.tsqrt(ss + 1e-24)
    rows = T.tsum(diff * diff, axis=tuple(range(1, a.ndim)))
    return T.tmean(rows) if squared else T.tmean(T.tsqrt(rows + 1e-24))


def inversion_latent_loss(s, s_f, c, c_f, squared: bool = False) -> Tensor:
    """||s - s_f|| + ||c - c_f|| (Euclidean norms; squared switchable)."""
    return _code_distance(as_tensor(s), as_tensor(s_f), squared) + _code_distance(
        as_tensor(c), as_tensor(c_f), squared
    )


def mse(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("mse shapes differ", a.shape, b.shape)
    d = a - b
    return T.tmean(d * d)


def inversion_encoder_loss(
    x_real: Tensor,
    x_rec: Tensor,
    latent_term: Tensor,
    disc_score: Tensor,
    weights: LossWeights,
    perceptual: Tensor | None = None,
) -> Tensor:
    """MSE + perceptual + lambda_lat * latent + lambda_adv * softplus(-score)."""
    loss = mse(x_real, x_rec)
    if perceptual is not None:
        loss = loss + perceptual
    loss = loss + weights.lambda_lat * as_tensor(latent_term)
    return loss + weights.lambda_adv * T.tmean(T.softplus(-as_tensor(disc_score)))


def latent_opt_loss(
    s: Tensor,
    c: Tensor,
    x_real: Tensor,
    synthesize,
    encode_style,
    encode_content,
    lambda_reg: float,
    perceptual_fn=None,
) -> Tensor:
    """Reconstruction + code-consistency objective for test-time fitting.

    synthesize(s, c) -> image batch (differentiable in s, c);
    encode_style/encode_content(image) -> codes. The consistency terms
    pull (s, c) toward what the frozen encoders read off the current
    reconstruction.
    """
    if lambda_reg < 0:
        raise ContractError(f"lambda_reg must be nonnegative, got {lambda_reg}")
    x_rec = synthesize(s, c)
    loss = mse(x_real, x_rec)
    if perceptual_fn is not None:
        loss = loss + perceptual_fn(x_real, x_rec)
    s_back = encode_style(x_rec)
    c_back = encode_content(x_rec)
    loss = loss + lambda_reg * _code_distance(s, s_back, squared=False)
    return loss + lambda_reg * _code_distance(c, c_back, squared=False)
