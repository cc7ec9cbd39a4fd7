"""
Training loop: alternating MAP updates of generators+encoders and the two
discriminators, with Monte-Carlo latent sampling and optional paired warm-up.

All randomness is drawn from streams derived from (seed, purpose, counter),
so a run resumed from a checkpoint continues exactly like an uninterrupted
one.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from bcgn.core.config import get_settings
from bcgn.core.errors import ConfigValidationError, NumericalError
from bcgn.schemas.config_schemas import LatentKind, TrainConfig
from bcgn.schemas.report_schemas import IterationMetrics
from bcgn.services.data.datasets import Dataset
from bcgn.services.data.latents import LatentBank
from bcgn.services.nets import (
    ModelParams,
    ParamSet,
    decode_sfm,
    encode_stats,
    encoder_forward,
    init_params,
    kl_loss,
)
from bcgn.services.tensor import Rng, Tape, Tensor, gradients_for
from bcgn.services.tensor import functional as F
from bcgn.services.training.optimizer import OptimState, adam_step, lr_at
from bcgn.services.training.posteriors import (
    Batch,
    GeneratorGraph,
    build_generator_graph,
    d_loss,
    supervised_pair_loss,
)

logger = logging.getLogger(__name__)

GENERATOR_GROUPS = ("theta_ga", "theta_gb", "theta_ea", "theta_eb")

Callback = Callable[[IterationMetrics, "TrainState"], None]


def _flat(params: ModelParams, groups: Sequence[str]) -> Dict[str, Tensor]:
    return {
        f"{group}/{name}": tensor
        for group in groups
        for name, tensor in getattr(params, group).items()
    }


def _with_flat(params: ModelParams, flat: Dict[str, Tensor]) -> ModelParams:
    updates: Dict[str, Dict[str, Tensor]] = {}
    for key, tensor in flat.items():
        group, _, name = key.partition("/")
        updates.setdefault(group, {})[name] = tensor
    return params.replace(**{group: ParamSet(p) for group, p in updates.items()})


@dataclass
class TrainState:
    """Parameters, the three optimizer states and the global iteration count."""

    params: ModelParams
    opt_g: OptimState
    opt_da: OptimState
    opt_db: OptimState
    iteration: int = 0

    @classmethod
    def initial(cls, cfg: TrainConfig) -> "TrainState":
        params = init_params(cfg.arch, Rng.derive(cfg.seed, "init"))
        return cls(
            params=params,
            opt_g=OptimState.zeros_like(_flat(params, GENERATOR_GROUPS)),
            opt_da=OptimState.zeros_like(_flat(params, ("theta_da",))),
            opt_db=OptimState.zeros_like(_flat(params, ("theta_db",))),
        )


@dataclass
class TrainResult:
    state: TrainState
    metrics: List[IterationMetrics] = field(default_factory=list)


def sample_batch(params: ModelParams, x: Tensor, y: Tensor, cfg: TrainConfig, rng: Rng) -> Batch:
    """
    Draw the latent banks for one iteration.

    SFMs come from the encoders applied to this batch's own images: f_x from
    E_A(x) and f_y from E_B(y). With noise latents the encoders are unused.
    """
    if cfg.latent_kind == LatentKind.NOISE:
        height, width = x.shape[2], x.shape[3]
        latents_y = LatentBank.noise(rng, cfg.m_y, x.shape[0], height, width, x.dtype)
        latents_x = LatentBank.noise(rng, cfg.m_x, y.shape[0], height, width, y.dtype)
        return Batch(real_x=x, real_y=y, latents_x=latents_x, latents_y=latents_y)

    mu_a, logvar_a = encode_stats(params.theta_ea, x)
    mu_b, logvar_b = encode_stats(params.theta_eb, y)
    latents_x = LatentBank.from_maps(
        LatentKind.SFM, [decode_sfm(params.theta_ea, mu_a, logvar_a, rng) for _ in range(cfg.m_x)]
    )
    latents_y = LatentBank.from_maps(
        LatentKind.SFM, [decode_sfm(params.theta_eb, mu_b, logvar_b, rng) for _ in range(cfg.m_y)]
    )
    kl = F.add(kl_loss(mu_a, logvar_a), kl_loss(mu_b, logvar_b))
    return Batch(real_x=x, real_y=y, latents_x=latents_x, latents_y=latents_y, kl=kl)


def _generator_step(
    state: TrainState, x: Tensor, y: Tensor, cfg: TrainConfig, lr: float, rng: Rng, threads: int
) -> Tuple[ModelParams, OptimState, GeneratorGraph]:
    params = state.params
    with Tape() as tape:
        working = params.replace(
            **{group: getattr(params, group).trainable() for group in GENERATOR_GROUPS},
            theta_da=params.theta_da.frozen(),
            theta_db=params.theta_db.frozen(),
        )
        batch = sample_batch(working, x, y, cfg, rng)
        graph = build_generator_graph(cfg.objective, working, batch, threads)
    grads = tape.backward(graph.total)

    flat = _flat(working, GENERATOR_GROUPS)
    flat_grads = dict(zip(flat, gradients_for(grads, flat.values())))
    updated, opt_g = adam_step(flat, flat_grads, state.opt_g, lr, cfg.beta1, cfg.beta2)
    return _with_flat(params, updated), opt_g, graph


def _discriminator_step(
    group: str,
    params: ModelParams,
    opt: OptimState,
    real: Tensor,
    fakes: List[Tensor],
    recons: List[Tensor],
    cfg: TrainConfig,
    lr: float,
) -> Tuple[ModelParams, OptimState, float]:
    with Tape() as tape:
        d_params = getattr(params, group).trainable()
        loss = d_loss(
            cfg.objective,
            d_params,
            real.detach(),
            [t.detach() for t in fakes],
            [t.detach() for t in recons],
        )
    grads = tape.backward(loss)

    flat = {f"{group}/{name}": t for name, t in d_params.items()}
    flat_grads = dict(zip(flat, gradients_for(grads, flat.values())))
    updated, opt = adam_step(flat, flat_grads, opt, lr, cfg.beta1, cfg.beta2)
    return _with_flat(params, updated), opt, loss.item()


def train_iteration(
    state: TrainState,
    x: Tensor,
    y: Tensor,
    cfg: TrainConfig,
    lr: float,
    epoch: int = 0,
    threads: int = 1,
) -> Tuple[TrainState, IterationMetrics]:
    """
    One iteration: a generator+encoder step with frozen discriminators, then a
    D_A step and a D_B step on the (detached) images of that forward pass.

    Args:
        state: Current training state
        x: Domain-A batch
        y: Domain-B batch
        cfg: Training configuration
        lr: Learning rate for all three steps
        epoch: Epoch index for the metrics record
        threads: Workers for the latent samples

    Returns:
        (next state, metrics record)

    Raises:
        NumericalError: If any loss or activation becomes non-finite
    """
    it = state.iteration
    rng = Rng.derive(cfg.seed, "iteration", it)
    try:
        params, opt_g, graph = _generator_step(state, x, y, cfg, lr, rng, threads)
        # D_A judges domain B: real y, fakes ỹ, reconstructions ŷ
        params, opt_da, da_loss = _discriminator_step(
            "theta_da", params, state.opt_da, y, graph.fakes_y, graph.recons_y, cfg, lr
        )
        params, opt_db, db_loss = _discriminator_step(
            "theta_db", params, state.opt_db, x, graph.fakes_x, graph.recons_x, cfg, lr
        )
    except NumericalError as exc:
        logger.error(
            f"Non-finite value at iteration {it} (epoch {epoch}, lr={lr}, "
            f"objective={cfg.objective.variant.value}, gamma={cfg.objective.gamma}): {exc}"
        )
        raise NumericalError(f"iteration {it}: {exc}") from exc

    metrics = IterationMetrics(
        iteration=it,
        epoch=epoch,
        g_loss=graph.total.item(),
        dA_loss=da_loss,
        dB_loss=db_loss,
        recon_l1=graph.recon_l1,
        lr=lr,
    )
    next_state = TrainState(params=params, opt_g=opt_g, opt_da=opt_da, opt_db=opt_db, iteration=it + 1)
    return next_state, metrics


def warmup_step(
    state: TrainState, x: Tensor, y: Tensor, cfg: TrainConfig, lr: float, rng: Rng
) -> Tuple[TrainState, float]:
    """One supervised update of generators (and encoders) on a paired batch."""
    params = state.params
    with Tape() as tape:
        working = params.replace(
            **{group: getattr(params, group).trainable() for group in GENERATOR_GROUPS}
        )
        if cfg.latent_kind == LatentKind.NOISE:
            latent_x = Tensor(rng.normal((y.shape[0], 1) + y.shape[2:], dtype=y.dtype), dtype=y.dtype)
            latent_y = Tensor(rng.normal((x.shape[0], 1) + x.shape[2:], dtype=x.dtype), dtype=x.dtype)
        else:
            latent_x = encoder_forward(working.theta_ea, x, rng)[0]
            latent_y = encoder_forward(working.theta_eb, y, rng)[0]
        loss = supervised_pair_loss(working.theta_ga, working.theta_gb, x, y, latent_x, latent_y)
    grads = tape.backward(loss)

    flat = _flat(working, GENERATOR_GROUPS)
    flat_grads = dict(zip(flat, gradients_for(grads, flat.values())))
    updated, opt_g = adam_step(flat, flat_grads, state.opt_g, lr, cfg.beta1, cfg.beta2)
    next_state = TrainState(
        params=_with_flat(params, updated),
        opt_g=opt_g,
        opt_da=state.opt_da,
        opt_db=state.opt_db,
        iteration=state.iteration,
    )
    return next_state, loss.item()


def iterations_per_epoch(size_a: int, size_b: int, batch_size: int) -> int:
    return max(1, min(size_a, size_b) // batch_size)


def _warmup_epoch(
    state: TrainState,
    data_a: Dataset,
    data_b: Dataset,
    indices: np.ndarray,
    cfg: TrainConfig,
    epoch: int,
    lr: float,
) -> TrainState:
    dtype = cfg.arch.np_dtype
    losses = []
    for start in range(0, len(indices), cfg.batch_size):
        idx = indices[start : start + cfg.batch_size]
        x = data_a.batch(idx, dtype)
        y = data_b.batch(data_a.pairing[idx], dtype)
        rng = Rng.derive(cfg.seed, "warmup", epoch, start)
        state, loss = warmup_step(state, x, y, cfg, lr, rng)
        losses.append(loss)
    logger.info(f"Warm-up epoch {epoch}: {len(indices)} pairs, mean paired L1 {np.mean(losses):.4f}")
    return state


def train_loop(
    data_a: Dataset,
    data_b: Dataset,
    cfg: TrainConfig,
    callbacks: Sequence[Callback] = (),
    state: Optional[TrainState] = None,
    threads: Optional[int] = None,
) -> TrainResult:
    """
    Run the training protocol.

    Each epoch shuffles both domains with a seeded permutation and walks them
    in mini-batches. When warm-up pairs are configured, a supervised pass over
    a fixed, seeded subset of paired items runs at the start of every epoch.

    Args:
        data_a: Domain-A images
        data_b: Domain-B images
        cfg: Training configuration
        callbacks: Called with each iteration's metrics and the new state
        state: State to resume from (a fresh initialization when None)
        threads: Latent-sample workers (defaults to the BCGN_THREADS setting)

    Returns:
        TrainResult with the final state and the metrics of the iterations run

    Raises:
        ConfigValidationError: On empty or mismatched datasets, or warm-up
            without paired data
    """
    settings = get_settings()
    threads = threads if threads is not None else settings.threads
    arch = cfg.arch
    expected = (arch.channels, arch.height, arch.width)
    if len(data_a) == 0 or len(data_b) == 0:
        raise ConfigValidationError("training needs nonempty datasets for both domains")
    for data in (data_a, data_b):
        if data.image_shape != expected:
            raise ConfigValidationError(
                f"domain {data.domain} images are {data.image_shape}, architecture expects {expected}"
            )

    warm = cfg.resolved_warmup_pairs(len(data_a))
    if warm and data_a.pairing is None:
        raise ConfigValidationError("warmup_pairs > 0 needs paired data")
    warm_idx = Rng.derive(cfg.seed, "warmup_pairs").choice(len(data_a), warm) if warm else None

    per_epoch = iterations_per_epoch(len(data_a), len(data_b), cfg.batch_size)
    total = cfg.epochs_total * per_epoch
    if cfg.max_iterations is not None:
        total = min(total, cfg.max_iterations)
    state = state or TrainState.initial(cfg)
    logger.info(
        f"Training {total} iterations ({per_epoch} per epoch) from iteration {state.iteration}, "
        f"objective={cfg.objective.variant.value}, gamma={cfg.objective.gamma}, "
        f"m={cfg.m_x}/{cfg.m_y}, latents={cfg.latent_kind.value}, warm-up pairs={warm}"
    )

    dtype = arch.np_dtype
    n = cfg.batch_size
    metrics: List[IterationMetrics] = []
    order_epoch, order_a, order_b = -1, None, None
    for it in range(state.iteration, total):
        epoch, pos = divmod(it, per_epoch)
        lr = lr_at(epoch, cfg)
        if pos == 0 and warm_idx is not None:
            state = _warmup_epoch(state, data_a, data_b, warm_idx, cfg, epoch, lr)
        if epoch != order_epoch:
            order_epoch = epoch
            order_a = Rng.derive(cfg.seed, "order", "A", epoch).permutation(len(data_a))
            order_b = Rng.derive(cfg.seed, "order", "B", epoch).permutation(len(data_b))

        x = data_a.batch(order_a[pos * n : (pos + 1) * n], dtype)
        y = data_b.batch(order_b[pos * n : (pos + 1) * n], dtype)
        state, record = train_iteration(state, x, y, cfg, lr, epoch, threads)
        metrics.append(record)
        for callback in callbacks:
            callback(record, state)
        if it % settings.log_every == 0 or it == total - 1:
            logger.info(
                f"iter {it} epoch {epoch}: g={record.g_loss:.4f} dA={record.dA_loss:.4f} "
                f"dB={record.dB_loss:.4f} recon_l1={record.recon_l1:.4f} lr={lr:.2e}"
            )
    return TrainResult(state=state, metrics=metrics)
