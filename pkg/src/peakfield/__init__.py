"""Simulation and verification of extremal statistics of Gaussian fields."""
from .fields import (
    FieldSample,
    GaussianField,
    as_explicit,
    build_block,
    build_directed_polymer,
    build_explicit,
    build_independent,
    build_shifted,
    build_sk,
    orthonormal,
    sample,
)
from .extremes import estimate_sup_stats, free_energy, supremum

__version__ = "0.1.0"
