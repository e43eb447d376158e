"""Estimate persistence diagrams of piecewise Hölder signals from noisy grid samples."""
from .estimator import Bandwidth, BlockField, block_average, calibrate_bandwidth
from .grid import GridSpec, PersistenceDiagram, ScalarField, SeedStream
from .metrics import bottleneck, bottleneck_all_degrees, noise_statistic, sandwich_check, sup_norm_error
from .persistence import betti_at, build_filtration, compute_persistence
from .signals import (CosSineDisc, DiscBumps, LowerBoundBase, LowerBoundBump, NestedDiscs, NoiseModel,
                      OneDimCos, default_disc_bumps)

__version__ = "0.1.0"

__all__ = [
    "Bandwidth", "BlockField", "CosSineDisc", "DiscBumps", "GridSpec", "LowerBoundBase",
    "LowerBoundBump", "NestedDiscs", "NoiseModel", "OneDimCos", "PersistenceDiagram", "ScalarField",
    "SeedStream", "betti_at", "block_average", "bottleneck", "bottleneck_all_degrees",
    "build_filtration", "calibrate_bandwidth", "compute_persistence", "default_disc_bumps",
    "noise_statistic", "sandwich_check", "sup_norm_error",
]
