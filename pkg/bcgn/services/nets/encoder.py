"""
VAE-like encoder producing a one-channel statistic feature map (SFM).

Down-sample stack Q to a bottleneck of mean and log-variance maps, a
reparameterized sample, then up-sample stack P back to 1×H×W.
"""

from typing import Optional, Tuple

from bcgn.core.errors import ShapeError
from bcgn.services.nets.layers import conv, conv_t, norm_relu
from bcgn.services.nets.params import ParamSet
from bcgn.services.tensor import Rng, Tensor
from bcgn.services.tensor import functional as F


def encode_stats(e: ParamSet, img: Tensor) -> Tuple[Tensor, Tensor]:
    """Bottleneck mean and log-variance maps (N×L×H/4×W/4 each)."""
    expected = e["down1.weight"].shape[1]
    if img.ndim != 4 or img.shape[1] != expected:
        raise ShapeError(f"encoder expects {expected} channels, got shape {img.shape}")

    h = norm_relu(conv(e, "down1", img, stride=2, pad=1))
    h = norm_relu(conv(e, "down2", h, stride=2, pad=1))
    stats = conv(e, "stats", h, stride=1, pad=1)
    latent = stats.shape[1] // 2
    return F.slice_channels(stats, 0, latent), F.slice_channels(stats, latent, 2 * latent)


def decode_sfm(e: ParamSet, mu: Tensor, logvar: Tensor, rng: Optional[Rng]) -> Tensor:
    """
    Reparameterized sample μ + σ⊙ε pushed through the up-sample stack.

    Passing ``rng=None`` fixes ε = 0.
    """
    if rng is None:
        z = mu
    else:
        eps = Tensor(rng.normal(mu.shape, dtype=mu.dtype), dtype=mu.dtype)
        z = F.add(mu, F.mul(F.exp(F.mul(logvar, 0.5)), eps))
    h = norm_relu(conv_t(e, "up1", z))
    return conv_t(e, "up2", h)


def encoder_forward(
    e: ParamSet, img: Tensor, rng: Optional[Rng]
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Encode images into an SFM sample.

    Args:
        e: Encoder parameters
        img: N×C×H×W images
        rng: Stream for ε; None makes the output deterministic

    Returns:
        (sfm N×1×H×W, mu, logvar)
    """
    mu, logvar = encode_stats(e, img)
    return decode_sfm(e, mu, logvar, rng), mu, logvar


def kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """
    KL divergence to N(0, I): mean over the batch of ½Σ(μ² + σ² − log σ² − 1).
    """
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_loss: mismatched shapes {mu.shape} and {logvar.shape}")
    terms = F.sub(F.sub(F.add(F.square(mu), F.exp(logvar)), logvar), 1.0)
    batch = mu.shape[0] if mu.ndim > 1 else 1
    return F.mul(F.sum_all(terms), 0.5 / batch)
