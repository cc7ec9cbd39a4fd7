"""
Evaluation metrics: gradient difference, histogram intersection, RBF MMD and
mixture mode coverage.

All metrics are deterministic functions of their inputs and accept either
numpy arrays (N×C×H×W unless noted) or `Dataset` objects.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from bcgn.core.errors import ShapeError
from bcgn.services.data.datasets import Dataset, MixtureSpec

logger = logging.getLogger(__name__)

HIST_BINS = 64
MODE_RADIUS_SIGMAS = 3.0

ImageSet = Union[Dataset, np.ndarray]


def _as_array(images: ImageSet) -> np.ndarray:
    if isinstance(images, Dataset):
        return images.items.astype(np.float64)
    return np.asarray(images, dtype=np.float64)


def metric_gdl(a: ImageSet, b: ImageSet) -> float:
    """
    Gradient difference loss.

    Per image: Σ ||Δa| − |Δb|| over horizontal and vertical neighbor
    differences, summed over channels. 4D input is averaged over the batch;
    2D and 3D inputs are treated as a single image.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeError(f"metric_gdl: mismatched shapes {a.shape} and {b.shape}")
    if a.ndim < 2:
        raise ShapeError("metric_gdl needs at least 2D images")

    dx = np.abs(np.abs(np.diff(a, axis=-1)) - np.abs(np.diff(b, axis=-1)))
    dy = np.abs(np.abs(np.diff(a, axis=-2)) - np.abs(np.diff(b, axis=-2)))
    per_plane = dx.sum(axis=(-2, -1)) + dy.sum(axis=(-2, -1))
    if a.ndim == 4:
        return float(per_plane.sum(axis=1).mean())
    return float(np.sum(per_plane))


def metric_hist_intersection(a: ImageSet, b: ImageSet, bins: int = HIST_BINS) -> float:
    """
    Σ min(h_a, h_b) over normalized per-channel histograms on [-1, 1], averaged
    over channels. 1.0 means identical value distributions.
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    a, b = _as_array(a), _as_array(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("metric_hist_intersection needs nonempty image sets")
    if a.ndim != 4 or b.ndim != 4 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"metric_hist_intersection: incompatible shapes {a.shape} and {b.shape}")

    scores = []
    for c in range(a.shape[1]):
        h_a, _ = np.histogram(a[:, c].ravel(), bins=bins, range=(-1.0, 1.0))
        h_b, _ = np.histogram(b[:, c].ravel(), bins=bins, range=(-1.0, 1.0))
        scores.append(histogram_intersection(h_a / h_a.sum(), h_b / h_b.sum()))
    return float(np.mean(scores))


def histogram_intersection(h_a: np.ndarray, h_b: np.ndarray) -> float:
    """Intersection of two already-normalized histograms."""
    return float(np.minimum(np.asarray(h_a, dtype=np.float64), np.asarray(h_b, dtype=np.float64)).sum())


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] + (y * y).sum(axis=1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def median_bandwidth(a: np.ndarray, b: np.ndarray) -> float:
    """Median pairwise distance over the pooled sample (1.0 if all points coincide)."""
    pooled = np.concatenate([a, b], axis=0)
    d = np.sqrt(_sq_dists(pooled, pooled)[np.triu_indices(len(pooled), k=1)])
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def metric_mmd_rbf(
    a: ImageSet,
    b: ImageSet,
    bandwidth: Optional[float] = None,
    estimator: Literal["unbiased", "biased"] = "unbiased",
) -> float:
    """
    Squared MMD with k(u, v) = exp(−‖u − v‖² / 2σ²) on flattened images.

    Args:
        a: First sample set
        b: Second sample set
        bandwidth: Kernel σ; median pairwise distance when None
        estimator: "unbiased" (U-statistic, needs ≥2 items per set) or "biased"

    Returns:
        The estimate, clipped at 0
    """
    x = _as_array(a)
    y = _as_array(b)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("metric_mmd_rbf needs nonempty sample sets")
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"metric_mmd_rbf: feature sizes differ ({x.shape[1]} vs {y.shape[1]})")
    if bandwidth is None:
        bandwidth = median_bandwidth(x, y)
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")

    scale = 1.0 / (2.0 * bandwidth**2)
    k_xx = np.exp(-_sq_dists(x, x) * scale)
    k_yy = np.exp(-_sq_dists(y, y) * scale)
    k_xy = np.exp(-_sq_dists(x, y) * scale)
    n, m = len(x), len(y)

    if estimator == "unbiased" and n > 1 and m > 1:
        term_xx = (k_xx.sum() - np.trace(k_xx)) / (n * (n - 1))
        term_yy = (k_yy.sum() - np.trace(k_yy)) / (m * (m - 1))
    else:
        term_xx = k_xx.mean()
        term_yy = k_yy.mean()
    return float(max(term_xx + term_yy - 2.0 * k_xy.mean(), 0.0))


@dataclass(frozen=True)
class ModeCoverage:
    modes_hit: int
    quality_ratio: float


def item_positions(images: ImageSet) -> np.ndarray:
    """
    Blob position of each one-channel image: centroid of relu(pixel) weights
    on channel 0. Rows are NaN where no pixel is positive.
    """
    x = _as_array(images)
    if x.ndim != 4:
        raise ShapeError(f"expected N×C×H×W images, got {x.shape}")
    weights = np.maximum(x[:, 0], 0.0)
    total = weights.sum(axis=(1, 2))
    rows = np.arange(x.shape[2], dtype=np.float64)
    cols = np.arange(x.shape[3], dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (weights.sum(axis=2) * rows).sum(axis=1) / total
        c = (weights.sum(axis=1) * cols).sum(axis=1) / total
    positions = np.stack([r, c], axis=1)
    positions[total <= 0] = np.nan
    return positions


def metric_mode_coverage(generated: ImageSet, spec: MixtureSpec) -> ModeCoverage:
    """
    Assign each item to its nearest mode; a mode is hit when at least one item
    lies within 3σ of it.

    Returns:
        ModeCoverage(modes_hit, quality_ratio) where quality_ratio is the
        fraction of items within 3σ of any mode
    """
    positions = item_positions(generated)
    if len(positions) == 0:
        return ModeCoverage(modes_hit=0, quality_ratio=0.0)

    valid = ~np.isnan(positions).any(axis=1)
    dists = np.full((len(positions), spec.k), np.inf)
    dists[valid] = np.linalg.norm(positions[valid, None, :] - spec.centers[None, :, :], axis=2)
    nearest = dists.argmin(axis=1)
    close = dists[np.arange(len(positions)), nearest] <= MODE_RADIUS_SIGMAS * spec.sigma

    modes_hit = int(len(np.unique(nearest[close])))
    quality = float(close.mean())
    logger.debug(f"Mode coverage: {modes_hit}/{spec.k} modes, quality {quality:.3f}")
    return ModeCoverage(modes_hit=modes_hit, quality_ratio=quality)
