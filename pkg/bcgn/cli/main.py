#!/usr/bin/env python3
"""
Command Line Interface for the Bayesian cyclic translation engine
"""

import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from bcgn.cli import commands
from bcgn.core.errors import exit_code_for
from bcgn.core.logging import configure_logging

logger = logging.getLogger(__name__)


def _gamma_list(value: str) -> List[float]:
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from exc


def _seed_list(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from exc


def _metric_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _warmup(value: str):
    if value == "auto":
        return value
    try:
        return int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {value!r}") from exc


# (flag, RunConfig key, type, help)
TRAIN_FLAGS = [
    ("--objective", "objective", str, "standard | least_squares"),
    ("--gamma", "gamma", float, "Balance factor γ for reconstructed fakes"),
    ("--lambda", "lambda", float, "Cycle-consistency weight λ"),
    ("--lambda-kl", "lambda_kl", float, "Encoder KL weight λ_KL"),
    ("--m", "m", int, "Latent samples per input"),
    ("--alpha", "alpha", float, "Prior weight α"),
    ("--prior-norm", "prior_norm", str, "l2 | l1_squared"),
    ("--lr", "lr", float, "Initial learning rate"),
    ("--beta1", "beta1", float, "ADAM β1"),
    ("--beta2", "beta2", float, "ADAM β2"),
    ("--epochs", "epochs", int, "Total epochs"),
    ("--epochs-constant", "epochs_constant", int, "Epochs at constant learning rate"),
    ("--lr-decay", "lr_decay", str, "linear | cosine"),
    ("--max-iterations", "max_iterations", int, "Stop after this many iterations"),
    ("--batch", "batch", int, "Mini-batch size"),
    ("--seed", "seed", int, "Run seed"),
    ("--task", "task", str, "shift | mixture"),
    ("--dataset-size", "dataset_size", int, "Items per domain"),
    ("--image-size", "image_size", int, "Square image side"),
    ("--features", "features", int, "Base feature width"),
    ("--res-blocks", "res_blocks", int, "Generator residual blocks"),
    ("--latent-kind", "latent_kind", str, "sfm | noise"),
    ("--warmup-pairs", "warmup_pairs", _warmup, "Paired warm-up items per epoch (int or 'auto')"),
    ("--checkpoint-every", "checkpoint_every", int, "Iterations between checkpoints"),
    ("--out-dir", "out_dir", str, "Run directory"),
]

# RunConfig keys an experiment takes from the command line
EXPERIMENT_KEYS = (
    "image_size",
    "dataset_size",
    "features",
    "res_blocks",
    "batch",
    "lr",
    "epochs",
    "latent_kind",
    "warmup_pairs",
    "out_dir",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcgn",
        description="Bayesian cyclic image translation at desk scale, with an exact theory oracle",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  bcgn oracle --gamma 0,0.5                     # Theory checks for two balance factors
  bcgn gradcheck --dtype float64                # Finite-difference suite in f64
  bcgn train --config run.json --gamma 0.5      # Train with a flag override
  bcgn eval runs/default/checkpoint.bcgn --metrics recon_l1,mmd
  bcgn diversify runs/default/checkpoint.bcgn runs/default/data_a.bcgn --k 4 --output div.bcgn
  bcgn experiment stability --seeds 0,1,2,3,4     # Bayesian vs ablated mode coverage
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    oracle = sub.add_parser("oracle", help="Check optimal discriminators and criterion bounds")
    oracle.add_argument("--gamma", type=_gamma_list, default=[0.0, 0.25, 0.5, 1.0], help="Comma-separated γ values")
    oracle.add_argument("--trials", type=int, default=10_000, help="Random triple pairs per γ (default: 10000)")
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    grad = sub.add_parser("gradcheck", help="Finite-difference checks of every op and loss")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--seeds", type=int, default=20, help="Seeds per case (default: 20)")
    grad.add_argument("--dtype", choices=["float32", "float64"], default="float32")

    train = sub.add_parser("train", help="Train on a synthetic two-domain task")
    train.add_argument("--config", type=str, help="JSON run configuration")
    train.add_argument("--resume", type=str, help="Checkpoint to resume from")
    for flag, key, kind, help_text in TRAIN_FLAGS:
        train.add_argument(flag, dest=f"cfg_{key}", type=kind, default=None, help=help_text)

    ev = sub.add_parser(
        "eval",
        help="Evaluate a checkpoint",
        description=(
            "Evaluate a checkpoint on two dataset containers. recon_l1 and translate_l1 "
            "are computed like the final summary that train writes to manifest.json and "
            "logs on its last line; with the manifest's seed and latent kind they match it."
        ),
    )
    ev.add_argument("checkpoint", type=str)
    ev.add_argument("--data-a", type=str, help="Domain-A container (default: next to the checkpoint)")
    ev.add_argument("--data-b", type=str, help="Domain-B container (default: next to the checkpoint)")
    ev.add_argument(
        "--metrics",
        type=_metric_list,
        default=list(commands.DEFAULT_METRICS),
        help=f"Comma-separated subset of {', '.join(commands.VALID_METRICS)}",
    )
    ev.add_argument("--latent-kind", choices=["sfm", "noise"], help="Default: from the run manifest")
    ev.add_argument("--seed", type=int, help="Default: from the run manifest")
    ev.add_argument("--task", choices=["shift", "mixture"], help="Default: from the run manifest")

    div = sub.add_parser("diversify", help="Generate k translations per input with random latents")
    div.add_argument("checkpoint", type=str)
    div.add_argument("input", type=str, help="Dataset container to translate")
    div.add_argument("--k", type=int, default=4)
    div.add_argument("--latent-seed", type=int, default=0)
    div.add_argument("--direction", choices=["a2b", "b2a"], default="a2b")
    div.add_argument("--output", type=str, required=True)

    exp = sub.add_parser("experiment", help="Multi-seed training experiment with a majority verdict")
    exp.add_argument("kind", choices=commands.EXPERIMENT_KINDS)
    exp.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4], help="Comma-separated run seeds")
    exp.add_argument("--iterations", type=int, help="Iterations per training run (default: per experiment)")
    exp.add_argument(
        "--reference-iteration",
        type=int,
        default=commands.REFERENCE_ITERATION,
        help="smoke: iteration whose L1 values the final ones must halve",
    )
    exp.add_argument("--config", type=str, help="JSON run configuration shared by every run")
    for flag, key, kind, help_text in TRAIN_FLAGS:
        if key in EXPERIMENT_KEYS:
            exp.add_argument(flag, dest=f"cfg_{key}", type=kind, default=None, help=help_text)
    return parser


def _train_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, f"cfg_{key}") for _, key, _, _ in TRAIN_FLAGS}


def _experiment_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, f"cfg_{key}") for key in EXPERIMENT_KEYS}


def _emit(report: Any) -> None:
    if hasattr(report, "model_dump_json"):
        print(report.model_dump_json(indent=2))
    else:
        print(json.dumps(report, indent=2, sort_keys=True))


def _run(args: argparse.Namespace) -> None:
    handlers: Dict[str, Callable[[], None]] = {
        "oracle": lambda: _checked(
            commands.cmd_oracle(args.gamma, args.trials, args.seed, args.inject_fault)
        ),
        "gradcheck": lambda: _checked(commands.cmd_gradcheck(args.seed, args.seeds, args.dtype)),
        "train": lambda: _emit(
            commands.cmd_train(
                commands.load_run_config(args.config, _train_overrides(args)), resume=args.resume
            )
        ),
        "eval": lambda: _emit(
            commands.cmd_eval(
                args.checkpoint,
                metrics=args.metrics,
                data_a_path=args.data_a,
                data_b_path=args.data_b,
                latent_kind=args.latent_kind,
                seed=args.seed,
                task=args.task,
            )
        ),
        "diversify": lambda: _emit(
            commands.cmd_diversify(
                args.checkpoint,
                args.input,
                args.k,
                args.output,
                latent_seed=args.latent_seed,
                direction=args.direction,
            )
        ),
        "experiment": lambda: _checked(
            commands.cmd_experiment(
                args.kind,
                commands.load_run_config(args.config, _experiment_overrides(args)),
                args.seeds,
                iterations=args.iterations,
                reference=args.reference_iteration,
            )
        ),
    }
    handlers[args.command]()


def _checked(report: Any) -> None:
    _emit(report)
    commands.raise_on_failure(report)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()

    try:
        _run(args)
    except Exception as exc:
        code = exit_code_for(exc)
        logger.error(f"{args.command} failed ({type(exc).__name__}): {exc}")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
