"""
Configuration schemas for architectures, objectives, training and runs.
"""

import math
from enum import Enum
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ObjectiveVariant(str, Enum):
    STANDARD = "standard"
    LEAST_SQUARES = "least_squares"


class LatentKind(str, Enum):
    NOISE = "noise"
    SFM = "sfm"


class ArchConfig(BaseModel):
    """Network dimensions shared by generators, discriminators and encoders."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    channels: int = Field(3, ge=1, description="Image channels C")
    height: int = Field(16, ge=8, description="Image height, divisible by 8")
    width: int = Field(16, ge=8, description="Image width, divisible by 8")
    features: int = Field(16, ge=1, description="Base feature width F")
    res_blocks: int = Field(2, ge=0, le=6, description="Residual blocks R")
    latent_channels: Optional[int] = Field(
        None, ge=1, description="Encoder bottleneck channels (defaults to 2F)"
    )
    dtype: Literal["float32", "float64"] = "float32"

    @model_validator(mode="after")
    def _divisible_by_eight(self) -> "ArchConfig":
        # three stride-2 discriminator convs
        if self.height % 8 or self.width % 8:
            raise ValueError(f"height and width must be divisible by 8, got {self.height}×{self.width}")
        return self

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    @property
    def bottleneck_channels(self) -> int:
        return self.latent_channels or 2 * self.features


class Objective(BaseModel):
    """Adversarial objective with balance factor, cycle and prior weights."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: ObjectiveVariant = ObjectiveVariant.LEAST_SQUARES
    gamma: float = Field(0.0, ge=0.0, description="Balance factor for reconstructed fakes")
    lambda_cyc: float = Field(10.0, gt=0.0, description="Cycle-consistency weight")
    lambda_kl: float = Field(0.1, ge=0.0, description="Encoder KL weight")
    weight_decay: float = Field(1e-4, ge=0.0, description="Prior precision surrogate α")
    prior_norm: Literal["l2", "l1_squared"] = "l2"


class TrainConfig(BaseModel):
    """Training protocol hyperparameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs_total: int = Field(100, ge=1)
    epochs_constant: int = Field(50, ge=0)
    lr: float = Field(2e-4, gt=0.0)
    beta1: float = Field(0.5, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    batch_size: int = Field(1, ge=1)
    m_x: int = Field(3, ge=1)
    m_y: int = Field(3, ge=1)
    seed: int = 0
    warmup_pairs: Union[int, Literal["auto"]] = 0
    latent_kind: LatentKind = LatentKind.SFM
    lr_decay: Literal["linear", "cosine"] = "linear"
    max_iterations: Optional[int] = Field(None, ge=1)
    objective: Objective = Field(default_factory=Objective)
    arch: ArchConfig = Field(default_factory=ArchConfig)

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.epochs_constant > self.epochs_total:
            raise ValueError("epochs_constant must not exceed epochs_total")
        if isinstance(self.warmup_pairs, int) and self.warmup_pairs < 0:
            raise ValueError("warmup_pairs must be non-negative or 'auto'")
        if self.objective.gamma > 0 and self.m_x != self.m_y:
            # each discriminator sees m fakes and m reconstructions
            raise ValueError(f"m_x and m_y must match when gamma > 0, got {self.m_x} and {self.m_y}")
        return self

    def resolved_warmup_pairs(self, dataset_size: int) -> int:
        """Number of paired items used for warm-up ('auto' = 1% rounded up)."""
        if self.warmup_pairs == "auto":
            return min(dataset_size, math.ceil(0.01 * dataset_size))
        return min(dataset_size, int(self.warmup_pairs))


class RunConfig(BaseModel):
    """
    Flat run configuration as written in JSON config files.

    Defaults follow the published hyperparameters (λ=10, λ_KL=0.1, m=3,
    lr=2e-4, β=(0.5, 0.999)). Unknown keys are rejected.
    """

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    objective: ObjectiveVariant = ObjectiveVariant.LEAST_SQUARES
    gamma: float = Field(0.0, ge=0.0)
    lambda_: float = Field(10.0, gt=0.0, alias="lambda")
    lambda_kl: float = Field(0.1, ge=0.0)
    m: int = Field(3, ge=1)
    alpha: float = Field(1e-4, ge=0.0)
    prior_norm: Literal["l2", "l1_squared"] = "l2"
    lr: float = Field(2e-4, gt=0.0)
    beta1: float = Field(0.5, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epochs: int = Field(100, ge=1)
    epochs_constant: Optional[int] = Field(None, ge=0)
    lr_decay: Literal["linear", "cosine"] = "linear"
    max_iterations: Optional[int] = Field(None, ge=1)
    batch: int = Field(1, ge=1)
    seed: int = 0
    task: Literal["shift", "mixture"] = "shift"
    dataset_size: int = Field(200, ge=1)
    image_size: int = Field(16, ge=8, multiple_of=8)
    features: int = Field(16, ge=1)
    res_blocks: int = Field(2, ge=0, le=6)
    latent_kind: LatentKind = LatentKind.SFM
    warmup_pairs: Union[int, Literal["auto"]] = 0
    checkpoint_every: Optional[int] = Field(None, ge=1)
    out_dir: Optional[str] = None

    def arch_config(self) -> ArchConfig:
        channels = 1 if self.task == "mixture" else 3
        return ArchConfig(
            channels=channels,
            height=self.image_size,
            width=self.image_size,
            features=self.features,
            res_blocks=self.res_blocks,
        )

    def to_train_config(self) -> TrainConfig:
        """Build the nested training configuration."""
        epochs_constant = (
            self.epochs_constant if self.epochs_constant is not None else self.epochs // 2
        )
        return TrainConfig(
            epochs_total=self.epochs,
            epochs_constant=epochs_constant,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size=self.batch,
            m_x=self.m,
            m_y=self.m,
            seed=self.seed,
            warmup_pairs=self.warmup_pairs,
            latent_kind=self.latent_kind,
            lr_decay=self.lr_decay,
            max_iterations=self.max_iterations,
            objective=Objective(
                variant=self.objective,
                gamma=self.gamma,
                lambda_cyc=self.lambda_,
                lambda_kl=self.lambda_kl,
                weight_decay=self.alpha,
                prior_norm=self.prior_norm,
            ),
            arch=self.arch_config(),
        )
