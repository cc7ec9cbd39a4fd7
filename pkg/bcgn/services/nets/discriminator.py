"""
Patch discriminator: three stride-2 convolutions and a 1×1 head.
"""

from bcgn.core.errors import ShapeError
from bcgn.schemas.config_schemas import ObjectiveVariant
from bcgn.services.nets.layers import conv
from bcgn.services.nets.params import ParamSet
from bcgn.services.tensor import Tensor
from bcgn.services.tensor import functional as F


def discriminator_forward(
    d: ParamSet,
    img: Tensor,
    variant: ObjectiveVariant = ObjectiveVariant.LEAST_SQUARES,
) -> Tensor:
    """
    Score an image batch patch-wise.

    Args:
        d: Discriminator parameters
        img: N×C×H×W images
        variant: The standard objective applies a sigmoid head; least squares
            leaves scores unbounded

    Returns:
        N×1×h×w patch map
    """
    expected = d["conv1.weight"].shape[1]
    if img.ndim != 4 or img.shape[1] != expected:
        raise ShapeError(f"discriminator expects {expected} channels, got shape {img.shape}")

    h = F.leaky_relu(conv(d, "conv1", img, stride=2, pad=1))
    h = F.leaky_relu(conv(d, "conv2", h, stride=2, pad=1))
    h = F.leaky_relu(conv(d, "conv3", h, stride=2, pad=1))
    scores = conv(d, "head", h)
    if variant == ObjectiveVariant.STANDARD:
        return F.sigmoid(scores)
    return scores


def discriminator_score(
    d: ParamSet,
    img: Tensor,
    variant: ObjectiveVariant = ObjectiveVariant.LEAST_SQUARES,
) -> Tensor:
    """Per-image score: the patch map mean-reduced to shape N."""
    return F.item_mean(discriminator_forward(d, img, variant))
