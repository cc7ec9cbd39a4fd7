"""
Checkpoint save/load on top of the tensor container.

Reserved entry names:
    theta_<net>/<param>               network parameters
    opt_m/<group>/<flat name>         ADAM first moments
    opt_v/<group>/<flat name>         ADAM second moments
    step/<group>                      ADAM step counter
    iteration                         global iterations completed
"""

import logging
from typing import Dict

import numpy as np

from bcgn.core.errors import ContainerError
from bcgn.services.data.container import read_container, write_container
from bcgn.services.nets import ModelParams
from bcgn.services.nets.params import NETWORK_NAMES
from bcgn.services.tensor import Tensor
from bcgn.services.training.optimizer import OptimState
from bcgn.services.training.trainer import TrainState

logger = logging.getLogger(__name__)

OPTIMIZER_GROUPS = ("generators", "discriminator_a", "discriminator_b")


def _optim_states(state: TrainState) -> Dict[str, OptimState]:
    return dict(zip(OPTIMIZER_GROUPS, (state.opt_g, state.opt_da, state.opt_db)))


def checkpoint_entries(state: TrainState) -> Dict[str, np.ndarray]:
    entries: Dict[str, np.ndarray] = {
        name: tensor.data for name, tensor in state.params.flatten().items()
    }
    for group, opt in _optim_states(state).items():
        for name, moment in opt.m.items():
            entries[f"opt_m/{group}/{name}"] = moment
        for name, moment in opt.v.items():
            entries[f"opt_v/{group}/{name}"] = moment
        entries[f"step/{group}"] = np.array([opt.step], dtype=np.float64)
    entries["iteration"] = np.array([state.iteration], dtype=np.float64)
    return entries


def save_checkpoint(path: str, state: TrainState) -> None:
    """Write parameters, optimizer states and the iteration counter."""
    write_container(path, checkpoint_entries(state))
    logger.info(f"Saved checkpoint at iteration {state.iteration} to {path}")


def load_params(path: str) -> ModelParams:
    """Read only the network parameters of a checkpoint."""
    entries = read_container(path)
    flat = {
        key: Tensor(value, dtype=value.dtype)
        for key, value in entries.items()
        if key.partition("/")[0] in NETWORK_NAMES
    }
    if not flat:
        raise ContainerError(f"{path}: no network parameters found")
    return ModelParams.unflatten(flat)


def load_checkpoint(path: str) -> TrainState:
    """
    Restore a full training state.

    Raises:
        ContainerError: If reserved entries are missing
    """
    entries = read_container(path)
    if "iteration" not in entries:
        raise ContainerError(f"{path}: missing 'iteration' entry")

    params = ModelParams.unflatten(
        {
            key: Tensor(value, dtype=value.dtype)
            for key, value in entries.items()
            if key.partition("/")[0] in NETWORK_NAMES
        }
    )
    optim: Dict[str, OptimState] = {group: OptimState() for group in OPTIMIZER_GROUPS}
    for key, value in entries.items():
        kind, _, rest = key.partition("/")
        if kind in ("opt_m", "opt_v"):
            group, _, name = rest.partition("/")
            if group not in optim:
                raise ContainerError(f"{path}: unknown optimizer group '{group}'")
            target = optim[group].m if kind == "opt_m" else optim[group].v
            target[name] = value.copy()
        elif kind == "step":
            if rest not in optim:
                raise ContainerError(f"{path}: unknown optimizer group '{rest}'")
            optim[rest].step = int(value.reshape(-1)[0])

    state = TrainState(
        params=params,
        opt_g=optim["generators"],
        opt_da=optim["discriminator_a"],
        opt_db=optim["discriminator_b"],
        iteration=int(entries["iteration"].reshape(-1)[0]),
    )
    logger.info(f"Loaded checkpoint at iteration {state.iteration} from {path}")
    return state
