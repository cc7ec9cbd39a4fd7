"""
Posterior objectives, the alternating ADAM trainer, inference and
checkpointing.
"""

from .checkpoint import load_checkpoint, load_params, save_checkpoint
from .gradcheck_suite import run_gradcheck
from .inference import (
    EvalOutputs,
    evaluate_translation,
    infer_diversify,
    infer_translate,
    noise_latents,
    pairwise_diversity,
    sfm_latent,
)
from .optimizer import OptimState, adam_step, lr_at
from .posteriors import (
    Batch,
    GeneratorGraph,
    build_generator_graph,
    d_loss,
    g_loss,
    make_variant_inputs,
    marginal_reduce,
    prior_penalty,
    supervised_pair_loss,
)
from .trainer import TrainResult, TrainState, train_iteration, train_loop, warmup_step

__all__ = [
    "Batch",
    "EvalOutputs",
    "GeneratorGraph",
    "OptimState",
    "TrainResult",
    "TrainState",
    "adam_step",
    "build_generator_graph",
    "d_loss",
    "evaluate_translation",
    "g_loss",
    "infer_diversify",
    "infer_translate",
    "load_checkpoint",
    "load_params",
    "lr_at",
    "make_variant_inputs",
    "marginal_reduce",
    "noise_latents",
    "pairwise_diversity",
    "prior_penalty",
    "run_gradcheck",
    "save_checkpoint",
    "sfm_latent",
    "supervised_pair_loss",
    "train_iteration",
    "train_loop",
    "warmup_step",
]
