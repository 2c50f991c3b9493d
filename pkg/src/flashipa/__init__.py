"""Invariant Point Attention with a linear-memory factorized form."""

from .attention_kernel import TileSpec, flash_attention, naive_attention
from .flash_ipa import flash_ipa_forward
from .geometry import FrameSet, RigidTransform
from .ipa_reference import IpaConfig, IpaWeights, init_weights, reference_forward
from .pair_features import DistogramSpec, FactorizedPair
from .tensor_core import Rng

__all__ = [
    "DistogramSpec", "FactorizedPair", "FrameSet", "IpaConfig", "IpaWeights", "RigidTransform",
    "Rng", "TileSpec", "flash_attention", "flash_ipa_forward", "init_weights", "naive_attention",
    "reference_forward",
]
