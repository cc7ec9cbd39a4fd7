"""
Cycle generator: conv-in, two stride-2 downsamples, residual blocks, two
stride-2 upsamples and a tanh head.
"""

from bcgn.core.errors import ShapeError
from bcgn.services.nets.layers import conv, conv_t, norm_relu
from bcgn.services.nets.params import ParamSet
from bcgn.services.tensor import Tensor
from bcgn.services.tensor import functional as F


def _res_blocks(g: ParamSet) -> int:
    count = 0
    while f"res{count}.conv1.weight" in g:
        count += 1
    return count


def generator_forward(g: ParamSet, x_lat: Tensor) -> Tensor:
    """
    Translate an image concatenated with one latent channel.

    Args:
        g: Generator parameters
        x_lat: N×(C+1)×H×W input (image channels followed by the latent map)

    Returns:
        N×C×H×W image with values in (−1, 1)

    Raises:
        ShapeError: If the input channel count is not C+1
    """
    expected = g["conv_in.weight"].shape[1]
    if x_lat.ndim != 4 or x_lat.shape[1] != expected:
        raise ShapeError(f"generator expects {expected} input channels, got shape {x_lat.shape}")

    h = norm_relu(conv(g, "conv_in", x_lat, stride=1, pad=1))
    h = norm_relu(conv(g, "down1", h, stride=2, pad=1))
    h = norm_relu(conv(g, "down2", h, stride=2, pad=1))
    for i in range(_res_blocks(g)):
        r = norm_relu(conv(g, f"res{i}.conv1", h, stride=1, pad=1))
        r = F.instance_norm(conv(g, f"res{i}.conv2", r, stride=1, pad=1))
        h = F.add(h, r)
    h = norm_relu(conv_t(g, "up1", h))
    h = norm_relu(conv_t(g, "up2", h))
    return F.tanh(conv(g, "conv_out", h, stride=1, pad=1))
