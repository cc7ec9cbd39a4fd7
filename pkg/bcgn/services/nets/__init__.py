"""
Network architectures: generators, patch discriminators and SFM encoders.
"""

from .discriminator import discriminator_forward, discriminator_score
from .encoder import decode_sfm, encode_stats, encoder_forward, kl_loss
from .generator import generator_forward
from .params import ModelParams, ParamSet, init_params

__all__ = [
    "ModelParams",
    "ParamSet",
    "decode_sfm",
    "discriminator_forward",
    "discriminator_score",
    "encode_stats",
    "encoder_forward",
    "generator_forward",
    "init_params",
    "kl_loss",
]
