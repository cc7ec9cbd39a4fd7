"""
Negative log-posterior objectives for the discriminators and generators.

Every loss here is minimized. Sums over items and latent samples are
normalized by n·m, patch maps are mean-reduced to one score per image, and
the Gaussian weight prior enters as a norm penalty.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from bcgn.core.errors import ShapeError
from bcgn.schemas.config_schemas import Objective, ObjectiveVariant
from bcgn.services.data.latents import LatentBank
from bcgn.services.nets import ModelParams, ParamSet, discriminator_score, generator_forward
from bcgn.services.tensor import Tensor
from bcgn.services.tensor import functional as F
from bcgn.services.training.parallel import map_samples

logger = logging.getLogger(__name__)

Latents = Union[LatentBank, Sequence[Tensor]]


@dataclass
class Batch:
    """
    One training mini-batch.

    ``latents_y`` are the f_y maps combined with x (x→y direction) and
    ``latents_x`` the f_x maps combined with y (y→x direction). ``kl`` is the
    summed encoder KL when the latents are SFMs.
    """

    real_x: Tensor
    real_y: Tensor
    latents_x: LatentBank
    latents_y: LatentBank
    kl: Optional[Tensor] = None


@dataclass
class GeneratorGraph:
    """Forward graph of both cycles and the generator loss terms."""

    real_x: Tensor
    real_y: Tensor
    total: Tensor
    adversarial: Tensor
    cycle: Tensor
    kl: Tensor
    prior: Tensor
    fakes_y: List[Tensor] = field(default_factory=list)
    fakes_x: List[Tensor] = field(default_factory=list)
    recons_x: List[Tensor] = field(default_factory=list)
    recons_y: List[Tensor] = field(default_factory=list)

    @property
    def recon_l1(self) -> float:
        """Per-pixel mean |x̂ − x| and |ŷ − y|, averaged over samples and directions."""
        return 0.5 * (_mean_abs(self.recons_x, self.real_x) + _mean_abs(self.recons_y, self.real_y))


def _mean_abs(images: List[Tensor], target: Tensor) -> float:
    return float(np.mean([np.abs(img.data - target.data).mean() for img in images]))


def _zero(like: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=like.dtype), dtype=like.dtype)


def make_variant_inputs(x: Tensor, latents: Latents) -> List[Tensor]:
    """
    Concatenate each latent map to the source batch as an extra channel.

    Args:
        x: N×C×H×W source images
        latents: m maps of shape N×1×H×W or 1×1×H×W (broadcast over the batch)

    Returns:
        m tensors of shape N×(C+1)×H×W
    """
    maps = list(latents)
    if not maps:
        raise ValueError("make_variant_inputs needs at least one latent map")
    if x.ndim != 4:
        raise ShapeError(f"source batch must be N×C×H×W, got {x.shape}")

    inputs = []
    for f in maps:
        if f.ndim != 4 or f.shape[1] != 1 or f.shape[2:] != x.shape[2:]:
            raise ShapeError(f"latent map {f.shape} does not fit source batch {x.shape}")
        if f.shape[0] == 1 and x.shape[0] > 1:
            f = F.repeat_batch(f, x.shape[0])
        elif f.shape[0] != x.shape[0]:
            raise ShapeError(f"latent batch {f.shape[0]} does not match source batch {x.shape[0]}")
        inputs.append(F.concat_channels(x, f))
    return inputs


def prior_penalty(params: Union[ParamSet, Sequence[Tensor]], alpha: float, norm: str = "l2") -> Tensor:
    """
    Weight-prior penalty: α·Σθ² (``l2``) or α·(Σ|θ|)² (``l1_squared``).
    """
    tensors = list(params.values()) if isinstance(params, ParamSet) else list(params)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if not tensors:
        return Tensor(np.zeros((), dtype=np.float32))
    if alpha == 0:
        return _zero(tensors[0])
    if norm == "l2":
        total = F.add_all([F.sum_all(F.square(t)) for t in tensors])
        return F.mul(total, alpha)
    if norm == "l1_squared":
        total = F.add_all([F.sum_all(F.absolute(t)) for t in tensors])
        return F.mul(F.square(total), alpha)
    raise ValueError(f"Unknown prior norm '{norm}'")


def marginal_reduce(per_sample_losses: Sequence[Tensor]) -> Tensor:
    """Monte-Carlo average of per-sample losses, accumulated in list order."""
    if not per_sample_losses:
        raise ValueError("marginal_reduce needs at least one sample")
    return F.mul(F.add_all(list(per_sample_losses)), 1.0 / len(per_sample_losses))


# ---------------------------------------------------------------------------
# Adversarial terms (summed over the items of a batch)
# ---------------------------------------------------------------------------


def _real_term(variant: ObjectiveVariant, scores: Tensor) -> Tensor:
    if variant == ObjectiveVariant.STANDARD:
        return F.mul(F.sum_all(F.log(scores)), -1.0)
    return F.sum_all(F.square(F.sub(scores, 1.0)))


def _fake_term(variant: ObjectiveVariant, scores: Tensor) -> Tensor:
    if variant == ObjectiveVariant.STANDARD:
        return F.mul(F.sum_all(F.log(1.0 - scores)), -1.0)
    return F.sum_all(F.square(scores))


def d_loss(
    obj: Objective,
    d_params: ParamSet,
    real: Tensor,
    fakes: Sequence[Tensor],
    recons: Sequence[Tensor] = (),
) -> Tensor:
    """
    Discriminator loss over real images, generated fakes and reconstructions.

    Real images carry weight (1+γ)·m, fakes weight 1, reconstructions weight γ;
    the sum is divided by n·m and the prior penalty added.

    Args:
        obj: Objective (variant, γ, α)
        d_params: Discriminator parameters
        real: n real images of the discriminator's domain
        fakes: m batches of translated images
        recons: m batches of reconstructed images (ignored when γ = 0)

    Returns:
        Scalar loss

    Raises:
        ShapeError: If γ > 0 and recons and fakes differ in count
    """
    if not fakes:
        raise ValueError("d_loss needs at least one batch of fakes")
    variant, gamma = obj.variant, obj.gamma
    n, m = real.shape[0], len(fakes)
    if gamma > 0 and len(recons) != m:
        raise ShapeError(f"d_loss pairs each fake batch with a reconstruction: {m} fakes, {len(recons)} recons")

    terms = [F.mul(_real_term(variant, discriminator_score(d_params, real, variant)), (1.0 + gamma) * m)]
    terms += [_fake_term(variant, discriminator_score(d_params, fake, variant)) for fake in fakes]
    if gamma > 0:
        terms += [
            F.mul(_fake_term(variant, discriminator_score(d_params, recon, variant)), gamma)
            for recon in recons
        ]
    data_term = F.mul(F.add_all(terms), 1.0 / (n * m))
    return F.add(data_term, prior_penalty(d_params, obj.weight_decay, obj.prior_norm))


def _direction_samples(
    obj: Objective,
    g_fwd: ParamSet,
    g_back: ParamSet,
    d_target: ParamSet,
    d_source: ParamSet,
    source: Tensor,
    latents_fwd: LatentBank,
    latents_back: LatentBank,
    threads: int,
):
    """
    Per-sample losses for one cycle direction source → target → source.

    Sample k translates with latents_fwd[k] and reconstructs with
    latents_back[k mod len(latents_back)].
    """
    variant, gamma = obj.variant, obj.gamma
    n = source.shape[0]
    inputs = make_variant_inputs(source, latents_fwd)

    def sample(k: int):
        fake = generator_forward(g_fwd, inputs[k])
        back_latent = latents_back[k % len(latents_back)]
        recon = generator_forward(g_back, make_variant_inputs(fake, [back_latent])[0])
        adv = _real_term(variant, discriminator_score(d_target, fake, variant))
        if gamma > 0:
            adv = F.add(adv, F.mul(_real_term(variant, discriminator_score(d_source, recon, variant)), gamma))
        adv = F.mul(adv, 1.0 / n)
        loss = F.add(adv, F.mul(F.l1_distance(recon, source), obj.lambda_cyc))
        return loss, adv.detach(), fake, recon

    return map_samples(sample, len(inputs), threads)


def build_generator_graph(
    obj: Objective,
    params: ModelParams,
    batch: Batch,
    threads: int = 1,
) -> GeneratorGraph:
    """
    Forward x→ỹ→x̂ and y→x̃→ŷ over all latent samples and assemble the
    generator loss.

    For the standard objective the adversarial terms are −log D(·); the
    least-squares objective uses (D(·) − 1)². Discriminator parameters are
    used as given, so pass frozen copies to keep them out of the update.

    Args:
        obj: Objective weights
        params: All network parameters
        batch: Images and latent banks
        threads: Workers for evaluating latent samples

    Returns:
        GeneratorGraph with the total loss and all generated images
    """
    if batch.latents_y[0].shape[0] not in (1, batch.real_x.shape[0]):
        raise ShapeError("latents_y batch size does not match real_x")
    if batch.latents_x[0].shape[0] not in (1, batch.real_y.shape[0]):
        raise ShapeError("latents_x batch size does not match real_y")

    forward_x = _direction_samples(
        obj, params.theta_ga, params.theta_gb, params.theta_da, params.theta_db,
        batch.real_x, batch.latents_y, batch.latents_x, threads,
    )
    forward_y = _direction_samples(
        obj, params.theta_gb, params.theta_ga, params.theta_db, params.theta_da,
        batch.real_y, batch.latents_x, batch.latents_y, threads,
    )

    data_loss = F.add(
        marginal_reduce([s[0] for s in forward_x]),
        marginal_reduce([s[0] for s in forward_y]),
    )
    adversarial = F.add(
        marginal_reduce([s[1] for s in forward_x]),
        marginal_reduce([s[1] for s in forward_y]),
    ).detach()
    cycle = F.sub(data_loss.detach(), adversarial)

    kl = F.mul(batch.kl, obj.lambda_kl) if batch.kl is not None else _zero(data_loss)
    prior = F.add(
        prior_penalty(params.theta_ga, obj.weight_decay, obj.prior_norm),
        prior_penalty(params.theta_gb, obj.weight_decay, obj.prior_norm),
    )
    total = F.add(F.add(data_loss, kl), prior)

    return GeneratorGraph(
        real_x=batch.real_x,
        real_y=batch.real_y,
        total=total,
        adversarial=adversarial,
        cycle=cycle,
        kl=kl.detach(),
        prior=prior.detach(),
        fakes_y=[s[2] for s in forward_x],
        recons_x=[s[3] for s in forward_x],
        fakes_x=[s[2] for s in forward_y],
        recons_y=[s[3] for s in forward_y],
    )


def g_loss(obj: Objective, params: ModelParams, batch: Batch, threads: int = 1) -> Tensor:
    """Scalar generator loss; see `build_generator_graph`."""
    return build_generator_graph(obj, params, batch, threads).total


def supervised_pair_loss(
    theta_ga: ParamSet,
    theta_gb: ParamSet,
    x: Tensor,
    y: Tensor,
    latent_x: Tensor,
    latent_y: Tensor,
) -> Tensor:
    """
    Paired warm-up loss L1(G_A(x ⊕ f_y), y) + L1(G_B(y ⊕ f_x), x).
    """
    y_hat = generator_forward(theta_ga, make_variant_inputs(x, [latent_y])[0])
    x_hat = generator_forward(theta_gb, make_variant_inputs(y, [latent_x])[0])
    return F.add(F.l1_distance(y_hat, y), F.l1_distance(x_hat, x))
