"""Mutual information of the noisy nonlinear Schrodinger channel.

Lattice discretization, perturbative action machinery, exact Wick
contraction engine, Monte-Carlo estimators and a split-step channel
simulator, all sharing one frequency-grid convention.
"""

from .domain import (
    FrequencyGrid,
    ChannelParams,
    Spectrum,
    make_grid,
    derived_params,
    sample_input,
    sample_b,
    b_from_xy,
    band_energy,
)

__all__ = [
    "FrequencyGrid",
    "ChannelParams",
    "Spectrum",
    "make_grid",
    "derived_params",
    "sample_input",
    "sample_b",
    "b_from_xy",
    "band_energy",
]

__version__ = "0.1.0"
