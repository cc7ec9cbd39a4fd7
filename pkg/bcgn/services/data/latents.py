"""
Latent banks: the m latent maps combined with each source image.
"""

from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple

import numpy as np

from bcgn.core.errors import ShapeError
from bcgn.schemas.config_schemas import LatentKind
from bcgn.services.tensor import Rng, Tensor


@dataclass(frozen=True)
class LatentBank:
    """
    m one-channel latent maps, each N×1×H×W (N = 1 broadcasts over a batch).

    Noise banks hold N(0, 1) draws; SFM banks hold encoder samples.
    """

    kind: LatentKind
    tensors: Tuple[Tensor, ...]

    def __post_init__(self) -> None:
        tensors = tuple(self.tensors)
        if not tensors:
            raise ValueError("a latent bank needs at least one latent map")
        first = tensors[0].shape
        for t in tensors:
            if t.ndim != 4 or t.shape[1] != 1:
                raise ShapeError(f"latent maps must be N×1×H×W, got {t.shape}")
            if t.shape != first:
                raise ShapeError(f"latent maps differ in shape: {first} vs {t.shape}")
        object.__setattr__(self, "tensors", tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors)

    def __getitem__(self, k: int) -> Tensor:
        return self.tensors[k]

    @classmethod
    def noise(
        cls,
        rng: Rng,
        m: int,
        batch: int,
        height: int,
        width: int,
        dtype: np.dtype = np.float32,
    ) -> "LatentBank":
        """Draw m Gaussian noise maps."""
        if m < 1:
            raise ValueError("m must be at least 1")
        return cls(
            LatentKind.NOISE,
            tuple(
                Tensor(rng.normal((batch, 1, height, width), dtype=dtype), dtype=dtype)
                for _ in range(m)
            ),
        )

    @classmethod
    def from_maps(cls, kind: LatentKind, maps: Sequence[Tensor]) -> "LatentBank":
        return cls(kind, tuple(maps))
