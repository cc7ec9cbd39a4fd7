"""
Synthetic two-domain datasets.

Shift task: random two-color block patterns (domain A) and the same patterns
after a fixed recolor + cyclic translation (domain B), paired by index.

Mixture task: one-channel images holding a single Gaussian blob placed near
one of k mode centers; domain B arranges its modes on a rotated ring.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple

import numpy as np

from bcgn.core.errors import ConfigValidationError, ContainerError, ShapeError
from bcgn.services.data.container import read_container, write_container
from bcgn.services.tensor import Rng, Tensor

logger = logging.getLogger(__name__)

Domain = Literal["A", "B"]

BLOCK = 4
RECOLOR_PERM = (2, 0, 1)
RECOLOR_SIGN = (-1.0, 1.0, 1.0)
SHIFT = (2, 2)

# the eight RGB corners of [-1, 1]^3
CORNERS = np.array(
    [[r, g, b] for r in (-1.0, 1.0) for g in (-1.0, 1.0) for b in (-1.0, 1.0)],
    dtype=np.float32,
)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable stack of N×C×H×W images in [-1, 1] for one domain.

    ``pairing[i]`` is the index of item i's partner in the other domain; it is
    only present for data with a known correspondence.
    """

    items: np.ndarray
    domain: Domain
    pairing: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        items = np.array(self.items, dtype=np.float32)
        if items.ndim != 4:
            raise ShapeError(f"dataset items must be N×C×H×W, got shape {items.shape}")
        if items.size and (items.min() < -1.0 or items.max() > 1.0):
            raise ConfigValidationError("dataset values must lie within [-1, 1]")
        if self.domain not in ("A", "B"):
            raise ConfigValidationError(f"unknown domain tag {self.domain!r}")
        items.flags.writeable = False
        object.__setattr__(self, "items", items)
        if self.pairing is not None:
            pairing = np.array(self.pairing, dtype=np.int64)
            if pairing.shape != (items.shape[0],):
                raise ShapeError(f"pairing must have one index per item, got {pairing.shape}")
            pairing.flags.writeable = False
            object.__setattr__(self, "pairing", pairing)

    def __len__(self) -> int:
        return int(self.items.shape[0])

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return tuple(self.items.shape[1:])

    def batch(self, indices: np.ndarray, dtype: np.dtype = np.float32) -> Tensor:
        """Gather items into a tensor batch."""
        return Tensor(self.items[np.asarray(indices)].astype(dtype), dtype=dtype)


# ---------------------------------------------------------------------------
# Shift task
# ---------------------------------------------------------------------------


def shift_transform(images: np.ndarray) -> np.ndarray:
    """Recolor then translate: out[c] = sign[c]·in[perm[c]], rolled by SHIFT."""
    sign = np.asarray(RECOLOR_SIGN, dtype=images.dtype)[:, None, None]
    recolored = sign * images[..., list(RECOLOR_PERM), :, :]
    return np.roll(recolored, SHIFT, axis=(-2, -1))


def shift_inverse(images: np.ndarray) -> np.ndarray:
    """Exact inverse of `shift_transform`."""
    unrolled = np.roll(images, (-SHIFT[0], -SHIFT[1]), axis=(-2, -1))
    sign = np.asarray(RECOLOR_SIGN, dtype=images.dtype)[:, None, None]
    out = np.empty_like(unrolled)
    out[..., list(RECOLOR_PERM), :, :] = sign * unrolled
    return out


def gen_shift_task(seed: int, n: int, height: int, width: int) -> Tuple[Dataset, Dataset, np.ndarray]:
    """
    Generate the block-pattern translation task.

    Args:
        seed: Data seed
        n: Items per domain
        height: Image height (divisible by 4)
        width: Image width (divisible by 4)

    Returns:
        (domain A, domain B, pairing) with B[i] = shift_transform(A[i])
    """
    if height % BLOCK or width % BLOCK:
        raise ConfigValidationError(f"shift task needs H, W divisible by {BLOCK}, got {height}×{width}")
    if n < 0:
        raise ConfigValidationError("n must be non-negative")

    rng = Rng.derive(seed, "shift_task")
    grid_h, grid_w = height // BLOCK, width // BLOCK
    bits = rng.integers(2, n * grid_h * grid_w).reshape(n, grid_h, grid_w)
    first = rng.integers(len(CORNERS), n)
    # second color differs from the first
    second = (first + 1 + rng.integers(len(CORNERS) - 1, n)) % len(CORNERS)

    mask = np.kron(bits, np.ones((BLOCK, BLOCK), dtype=np.int64)).astype(bool)
    color0 = CORNERS[first][:, :, None, None]
    color1 = CORNERS[second][:, :, None, None]
    items_a = np.where(mask[:, None, :, :], color1, color0).astype(np.float32)
    items_b = shift_transform(items_a)

    pairing = np.arange(n, dtype=np.int64)
    logger.debug(f"Generated shift task: n={n}, size={height}×{width}, seed={seed}")
    return (
        Dataset(items_a, "A", pairing=pairing),
        Dataset(items_b, "B", pairing=pairing),
        pairing,
    )


# ---------------------------------------------------------------------------
# Mixture task
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Mode layout of the blob-mixture benchmark (centers as (row, col) pixels)."""

    centers: np.ndarray
    sigma: float = 1.0
    height: int = 16
    width: int = 16
    blob_width: float = 1.0

    def __post_init__(self) -> None:
        centers = np.array(self.centers, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[1] != 2:
            raise ShapeError(f"mode centers must be k×2, got {centers.shape}")
        if centers.shape[0] < 2:
            raise ConfigValidationError("a mixture needs at least 2 modes")
        if len(np.unique(centers.round(9), axis=0)) != centers.shape[0]:
            raise ConfigValidationError("mode centers must be distinct")
        if self.sigma <= 0 or self.blob_width <= 0:
            raise ConfigValidationError("sigma and blob_width must be positive")
        centers.flags.writeable = False
        object.__setattr__(self, "centers", centers)

    @property
    def k(self) -> int:
        return int(self.centers.shape[0])

    @classmethod
    def ring(
        cls,
        k: int = 8,
        radius: float = 4.5,
        height: int = 16,
        width: int = 16,
        sigma: float = 1.0,
        phase: float = 0.0,
    ) -> "MixtureSpec":
        """k modes evenly spaced on a circle around the image center."""
        angles = phase + 2.0 * math.pi * np.arange(k) / k
        center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
        centers = center + radius * np.stack([np.sin(angles), np.cos(angles)], axis=1)
        return cls(centers=centers, sigma=sigma, height=height, width=width)

    def rotated_variant(self) -> "MixtureSpec":
        """Same modes rotated by half the angular spacing about the image center."""
        center = np.array([(self.height - 1) / 2.0, (self.width - 1) / 2.0])
        angle = math.pi / self.k
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        centers = (self.centers - center) @ rot.T + center
        return MixtureSpec(
            centers=centers,
            sigma=self.sigma,
            height=self.height,
            width=self.width,
            blob_width=self.blob_width,
        )


def render_blobs(positions: np.ndarray, spec: MixtureSpec) -> np.ndarray:
    """Render one Gaussian blob per position as N×1×H×W images in [-1, 1]."""
    rows = np.arange(spec.height, dtype=np.float64)[None, :, None]
    cols = np.arange(spec.width, dtype=np.float64)[None, None, :]
    dist2 = (rows - positions[:, 0, None, None]) ** 2 + (cols - positions[:, 1, None, None]) ** 2
    blob = np.exp(-dist2 / (2.0 * spec.blob_width**2))
    return (2.0 * blob - 1.0)[:, None, :, :].astype(np.float32)


def _truncated_offsets(rng: Rng, n: int, sigma: float) -> np.ndarray:
    offsets = rng.normal((n, 2), std=sigma, dtype=np.float64)
    bad = np.linalg.norm(offsets, axis=1) > 2.0 * sigma
    while bad.any():
        offsets[bad] = rng.normal((int(bad.sum()), 2), std=sigma, dtype=np.float64)
        bad = np.linalg.norm(offsets, axis=1) > 2.0 * sigma
    return offsets


def sample_mixture(spec: MixtureSpec, rng: Rng, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Draw n blob positions; offsets from the chosen mode are truncated at 2σ."""
    modes = rng.integers(spec.k, n)
    positions = spec.centers[modes] + _truncated_offsets(rng, n, spec.sigma)
    return positions, modes


def gen_mixture_task(spec: MixtureSpec, seed: int, n: int) -> Tuple[Dataset, Dataset]:
    """
    Generate the mode-coverage task.

    Args:
        spec: Mode layout of domain A; domain B uses `spec.rotated_variant()`
        seed: Data seed
        n: Items per domain

    Returns:
        (domain A, domain B)
    """
    rng_a = Rng.derive(seed, "mixture", "A")
    rng_b = Rng.derive(seed, "mixture", "B")
    positions_a, _ = sample_mixture(spec, rng_a, n)
    positions_b, _ = sample_mixture(spec.rotated_variant(), rng_b, n)
    logger.debug(f"Generated mixture task: k={spec.k}, n={n}, seed={seed}")
    return Dataset(render_blobs(positions_a, spec), "A"), Dataset(render_blobs(positions_b, spec), "B")


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def save_dataset(path: str, dataset: Dataset) -> None:
    """Write a dataset as a container ("items", "domain", optional "pairing")."""
    entries = {
        "items": dataset.items,
        "domain": np.array([0.0 if dataset.domain == "A" else 1.0], dtype=np.float32),
    }
    if dataset.pairing is not None:
        entries["pairing"] = dataset.pairing.astype(np.float64)
    write_container(path, entries)


def load_dataset(path: str) -> Dataset:
    """Read a dataset written by `save_dataset`."""
    entries = read_container(path)
    if "items" not in entries or "domain" not in entries:
        raise ContainerError(f"{path}: not a dataset container (missing items/domain)")
    domain: Domain = "A" if float(entries["domain"].reshape(-1)[0]) == 0.0 else "B"
    pairing = entries.get("pairing")
    return Dataset(
        entries["items"],
        domain,
        pairing=pairing.astype(np.int64) if pairing is not None else None,
    )
