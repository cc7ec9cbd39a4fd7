"""
Parameterized building blocks shared by the networks.
"""

from bcgn.services.nets.params import ParamSet
from bcgn.services.tensor import Tensor
from bcgn.services.tensor import functional as F


def conv(params: ParamSet, name: str, x: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Convolution plus bias using ``{name}.weight`` / ``{name}.bias``."""
    out = F.conv2d(x, params[f"{name}.weight"], stride=stride, pad=pad)
    return F.add_bias(out, params[f"{name}.bias"])


def conv_t(params: ParamSet, name: str, x: Tensor, stride: int = 2, pad: int = 1) -> Tensor:
    """Transposed convolution plus bias."""
    out = F.conv_transpose2d(x, params[f"{name}.weight"], stride=stride, pad=pad)
    return F.add_bias(out, params[f"{name}.bias"])


def norm_relu(x: Tensor) -> Tensor:
    return F.relu(F.instance_norm(x))
