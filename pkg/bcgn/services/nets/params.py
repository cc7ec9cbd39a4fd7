"""
Named parameter collections for the six networks.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Tuple

import numpy as np

from bcgn.schemas.config_schemas import ArchConfig
from bcgn.services.tensor import Rng, Tensor

INIT_STD = 0.02

NETWORK_NAMES = ("theta_ga", "theta_gb", "theta_da", "theta_db", "theta_ea", "theta_eb")


class ParamSet(Mapping[str, Tensor]):
    """
    Ordered, immutable mapping of parameter name to tensor.

    Updates produce a new ParamSet; the tensors themselves are never
    modified in place.
    """

    def __init__(self, params: Mapping[str, Tensor]):
        self._params: Dict[str, Tensor] = dict(params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} tensors, {self.count()} values)"

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self._params.values())

    def weights(self) -> List[Tensor]:
        """Kernel tensors (everything except biases)."""
        return [t for name, t in self._params.items() if not name.endswith(".bias")]

    def map(self, fn: Callable[[str, Tensor], Tensor]) -> "ParamSet":
        return ParamSet({name: fn(name, t) for name, t in self._params.items()})

    def trainable(self) -> "ParamSet":
        """Fresh leaves sharing data, tracked by the tape."""
        return self.map(lambda _, t: Tensor(t.data, requires_grad=True, dtype=t.dtype))

    def frozen(self) -> "ParamSet":
        """Copies excluded from gradient tracking."""
        return self.map(lambda _, t: t.detach())

    def astype(self, dtype: np.dtype) -> "ParamSet":
        return self.map(lambda _, t: t.astype(dtype, requires_grad=False))


@dataclass(frozen=True)
class ModelParams:
    """Parameters of G_A, G_B, D_A, D_B, E_A and E_B."""

    theta_ga: ParamSet
    theta_gb: ParamSet
    theta_da: ParamSet
    theta_db: ParamSet
    theta_ea: ParamSet
    theta_eb: ParamSet

    def groups(self) -> Dict[str, ParamSet]:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def replace(self, **updates: ParamSet) -> "ModelParams":
        groups = self.groups()
        groups.update(updates)
        return ModelParams(**groups)

    def flatten(self) -> Dict[str, Tensor]:
        """Flat {"theta_ga/conv_in.weight": tensor} view for checkpoints."""
        return {
            f"{group}/{name}": tensor
            for group, params in self.groups().items()
            for name, tensor in params.items()
        }

    @classmethod
    def unflatten(cls, flat: Mapping[str, Tensor]) -> "ModelParams":
        grouped: Dict[str, Dict[str, Tensor]] = {name: {} for name in NETWORK_NAMES}
        for key, tensor in flat.items():
            group, _, name = key.partition("/")
            if group in grouped:
                grouped[group][name] = tensor
        return cls(**{group: ParamSet(params) for group, params in grouped.items()})


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------

Shapes = List[Tuple[str, Tuple[int, ...]]]


def _conv(name: str, out_ch: int, in_ch: int, k: int) -> Shapes:
    return [(f"{name}.weight", (out_ch, in_ch, k, k)), (f"{name}.bias", (out_ch,))]


def _conv_t(name: str, in_ch: int, out_ch: int, k: int) -> Shapes:
    # transpose kernels are stored input-channels first
    return [(f"{name}.weight", (in_ch, out_ch, k, k)), (f"{name}.bias", (out_ch,))]


def generator_shapes(arch: ArchConfig) -> Shapes:
    c, f = arch.channels, arch.features
    shapes = _conv("conv_in", f, c + 1, 3)
    shapes += _conv("down1", 2 * f, f, 4) + _conv("down2", 4 * f, 2 * f, 4)
    for i in range(arch.res_blocks):
        shapes += _conv(f"res{i}.conv1", 4 * f, 4 * f, 3) + _conv(f"res{i}.conv2", 4 * f, 4 * f, 3)
    shapes += _conv_t("up1", 4 * f, 2 * f, 4) + _conv_t("up2", 2 * f, f, 4)
    shapes += _conv("conv_out", c, f, 3)
    return shapes


def discriminator_shapes(arch: ArchConfig) -> Shapes:
    c, f = arch.channels, arch.features
    return (
        _conv("conv1", f, c, 4)
        + _conv("conv2", 2 * f, f, 4)
        + _conv("conv3", 4 * f, 2 * f, 4)
        + _conv("head", 1, 4 * f, 1)
    )


def encoder_shapes(arch: ArchConfig) -> Shapes:
    c, f, latent = arch.channels, arch.features, arch.bottleneck_channels
    return (
        _conv("down1", f, c, 4)
        + _conv("down2", 2 * f, f, 4)
        + _conv("stats", 2 * latent, 2 * f, 3)
        + _conv_t("up1", latent, f, 4)
        + _conv_t("up2", f, 1, 4)
    )


def _init_from_shapes(shapes: Shapes, rng: Rng, dtype: np.dtype) -> ParamSet:
    params = {}
    for name, shape in shapes:
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = rng.normal(shape, std=INIT_STD, dtype=dtype)
        params[name] = Tensor(data, dtype=dtype)
    return ParamSet(params)


def init_params(arch: ArchConfig, rng: Rng) -> ModelParams:
    """
    Initialize all six networks: weights ~ N(0, 0.02²), biases zero.

    Args:
        arch: Network dimensions
        rng: Stream the weights are drawn from (in the order G_A, G_B, D_A, D_B, E_A, E_B)

    Returns:
        Fresh ModelParams
    """
    dtype = arch.np_dtype
    return ModelParams(
        theta_ga=_init_from_shapes(generator_shapes(arch), rng, dtype),
        theta_gb=_init_from_shapes(generator_shapes(arch), rng, dtype),
        theta_da=_init_from_shapes(discriminator_shapes(arch), rng, dtype),
        theta_db=_init_from_shapes(discriminator_shapes(arch), rng, dtype),
        theta_ea=_init_from_shapes(encoder_shapes(arch), rng, dtype),
        theta_eb=_init_from_shapes(encoder_shapes(arch), rng, dtype),
    )
