"""Gram-Schmidt walk sampling and Gaussian moment estimators for smoothed Komlos instances."""

from smoothkomlos.instances import (
    KomlosMatrix,
    NoiseConfig,
    SmoothedMatrix,
    add_noise,
    discrepancy,
    make_instance,
)
from smoothkomlos.gswalk import WalkState, gs_walk, sample_stacked, walk_step

__version__ = "0.1.0"

__all__ = [
    "KomlosMatrix",
    "NoiseConfig",
    "SmoothedMatrix",
    "WalkState",
    "add_noise",
    "discrepancy",
    "gs_walk",
    "make_instance",
    "sample_stacked",
    "walk_step",
]
