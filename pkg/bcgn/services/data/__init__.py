"""
Synthetic datasets, latent banks, evaluation metrics and container I/O.
"""

from .container import decode_container, encode_container, read_container, write_container
from .datasets import (
    Dataset,
    MixtureSpec,
    gen_mixture_task,
    gen_shift_task,
    load_dataset,
    save_dataset,
    shift_inverse,
    shift_transform,
)
from .latents import LatentBank
from .metrics import (
    ModeCoverage,
    metric_gdl,
    metric_hist_intersection,
    metric_mmd_rbf,
    metric_mode_coverage,
)

__all__ = [
    "Dataset",
    "LatentBank",
    "MixtureSpec",
    "ModeCoverage",
    "decode_container",
    "encode_container",
    "gen_mixture_task",
    "gen_shift_task",
    "load_dataset",
    "metric_gdl",
    "metric_hist_intersection",
    "metric_mmd_rbf",
    "metric_mode_coverage",
    "read_container",
    "save_dataset",
    "shift_inverse",
    "shift_transform",
    "write_container",
]
