"""
Inference: translation with a chosen latent map, diversified generation and
the evaluation pass shared by `train` summaries and `eval`.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Union

import numpy as np

from bcgn.core.errors import ShapeError
from bcgn.schemas.config_schemas import LatentKind
from bcgn.services.data.datasets import Dataset
from bcgn.services.nets import ModelParams, encoder_forward, generator_forward
from bcgn.services.tensor import Rng, Tensor
from bcgn.services.training.posteriors import make_variant_inputs

logger = logging.getLogger(__name__)

Direction = Literal["a2b", "b2a"]
LatentLike = Union[Tensor, np.ndarray]

EVAL_BATCH = 16


def _latent_tensor(latent: LatentLike, dtype: np.dtype) -> Tensor:
    data = latent.data if isinstance(latent, Tensor) else np.asarray(latent)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4 or data.shape[1] != 1:
        raise ShapeError(f"latent must be 1×H×W or N×1×H×W, got {data.shape}")
    return Tensor(data.astype(dtype), dtype=dtype)


def _generator(params: ModelParams, direction: Direction):
    if direction == "a2b":
        return params.theta_ga
    if direction == "b2a":
        return params.theta_gb
    raise ValueError(f"Unknown direction '{direction}' (expected a2b or b2a)")


def infer_translate(
    params: ModelParams, x: Tensor, latent: LatentLike, direction: Direction = "a2b"
) -> Tensor:
    """
    Translate a batch with one latent map.

    Args:
        params: Trained parameters
        x: N×C×H×W source images
        latent: 1×H×W map (shared by the batch) or N×1×H×W maps
        direction: "a2b" uses G_A, "b2a" uses G_B

    Returns:
        Translated images with the shape of ``x``
    """
    g = _generator(params, direction)
    x = x.detach()
    lat = _latent_tensor(latent, x.dtype)
    return generator_forward(g, make_variant_inputs(x, [lat])[0])


def infer_diversify(
    params: ModelParams,
    x: Tensor,
    latents: Sequence[LatentLike],
    direction: Direction = "a2b",
) -> List[Tensor]:
    """One translation of ``x`` per latent map."""
    if not latents:
        raise ValueError("infer_diversify needs at least one latent map")
    return [infer_translate(params, x, latent, direction) for latent in latents]


def sfm_latent(
    params: ModelParams, reference: Tensor, direction: Direction = "a2b", rng: Optional[Rng] = None
) -> Tensor:
    """
    SFM of reference images from the target domain of ``direction``
    (E_B for a2b, E_A for b2a); deterministic when ``rng`` is None.
    """
    encoder = params.theta_eb if direction == "a2b" else params.theta_ea
    return encoder_forward(encoder, reference.detach(), rng)[0]


def noise_latents(seed: int, k: int, height: int, width: int, dtype: np.dtype = np.float32) -> List[Tensor]:
    """k N(0, 1) maps of shape 1×1×H×W, each from its own seeded stream."""
    return [
        Tensor(Rng.derive(seed, "latent", j).normal((1, 1, height, width), dtype=dtype), dtype=dtype)
        for j in range(k)
    ]


def pairwise_diversity(outputs: Sequence[Tensor]) -> List[List[float]]:
    """Mean absolute difference between every pair of outputs."""
    return [[float(np.abs(a.data - b.data).mean()) for b in outputs] for a in outputs]


@dataclass
class EvalOutputs:
    """Translations and reconstructions of both domains (numpy N×C×H×W)."""

    translated_b: np.ndarray
    translated_a: np.ndarray
    recon_a: np.ndarray
    recon_b: np.ndarray
    source_a: np.ndarray
    source_b: np.ndarray
    recon_l1: float
    translate_l1: Optional[float]


def evaluate_translation(
    params: ModelParams,
    data_a: Dataset,
    data_b: Dataset,
    latent_kind: LatentKind,
    seed: int,
    batch_size: int = EVAL_BATCH,
) -> EvalOutputs:
    """
    Translate and reconstruct the first min(|A|, |B|) items of each domain.

    Latents are deterministic: SFMs use ε = 0, translating item i with the
    SFM of the other domain's item (i + 1) mod count and reconstructing it
    with the SFM of item i itself; noise latents come from one seeded stream.

    Args:
        params: Parameters to evaluate
        data_a: Domain-A images
        data_b: Domain-B images
        latent_kind: Latent kind the model was trained with
        seed: Seed for noise latents
        batch_size: Evaluation batch size

    Returns:
        EvalOutputs with per-pixel recon_l1 (mean over both directions) and
        translate_l1 when pairing is known
    """
    count = min(len(data_a), len(data_b))
    if count == 0:
        raise ValueError("evaluation needs nonempty datasets")
    if data_a.image_shape != data_b.image_shape:
        raise ShapeError(f"domain shapes differ: {data_a.image_shape} vs {data_b.image_shape}")
    dtype = params.theta_ga["conv_in.weight"].dtype
    height, width = data_a.image_shape[1:]

    noise = None
    if latent_kind == LatentKind.NOISE:
        rng = Rng.derive(seed, "eval")
        noise = rng.normal((4, count, 1, height, width), dtype=dtype)

    other = (np.arange(count) + 1) % count
    outputs = {key: [] for key in ("translated_b", "recon_a", "translated_a", "recon_b")}
    for start in range(0, count, batch_size):
        idx = np.arange(start, min(start + batch_size, count))
        x = data_a.batch(idx, dtype)
        y = data_b.batch(idx, dtype)
        if noise is not None:
            f_y, f_x, f_x_back, f_y_back = (Tensor(noise[j, idx], dtype=dtype) for j in range(4))
        else:
            f_y = sfm_latent(params, data_b.batch(other[idx], dtype), "a2b")
            f_x_back = sfm_latent(params, x, "b2a")
            f_x = sfm_latent(params, data_a.batch(other[idx], dtype), "b2a")
            f_y_back = sfm_latent(params, y, "a2b")

        y_fake = generator_forward(params.theta_ga, make_variant_inputs(x, [f_y])[0])
        x_rec = generator_forward(params.theta_gb, make_variant_inputs(y_fake, [f_x_back])[0])
        x_fake = generator_forward(params.theta_gb, make_variant_inputs(y, [f_x])[0])
        y_rec = generator_forward(params.theta_ga, make_variant_inputs(x_fake, [f_y_back])[0])
        outputs["translated_b"].append(y_fake.data)
        outputs["recon_a"].append(x_rec.data)
        outputs["translated_a"].append(x_fake.data)
        outputs["recon_b"].append(y_rec.data)

    arrays = {key: np.concatenate(chunks, axis=0) for key, chunks in outputs.items()}
    source_a = data_a.items[:count]
    source_b = data_b.items[:count]
    recon_l1 = 0.5 * (
        float(np.abs(arrays["recon_a"] - source_a).mean())
        + float(np.abs(arrays["recon_b"] - source_b).mean())
    )

    translate_l1 = None
    if data_a.pairing is not None:
        targets_b = data_b.items[data_a.pairing[:count]]
        errors = [float(np.abs(arrays["translated_b"] - targets_b).mean())]
        if data_b.pairing is not None:
            targets_a = data_a.items[data_b.pairing[:count]]
            errors.append(float(np.abs(arrays["translated_a"] - targets_a).mean()))
        translate_l1 = float(np.mean(errors))

    return EvalOutputs(
        translated_b=arrays["translated_b"],
        translated_a=arrays["translated_a"],
        recon_a=arrays["recon_a"],
        recon_b=arrays["recon_b"],
        source_a=source_a,
        source_b=source_b,
        recon_l1=recon_l1,
        translate_l1=translate_l1,
    )
