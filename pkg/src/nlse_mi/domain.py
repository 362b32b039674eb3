"""Frequency/space lattices, channel parameters and Gaussian field sampling.

Discretization dictionary used by every other module:

* ``int dw/2pi -> delta * sum_j`` with ``delta = W / (2 pi M)``,
* a spectral delta function ``delta(w_j - w_k) -> delta_jk / (2 pi delta)``,
* per-mode variances ``E|X_j|^2 = P/delta``, ``E|B_j|^2 = Q L/delta`` and
  ``E|Y_j|^2 = (P + Q L)/delta`` on the inner band.

Mode frequencies are half-offset centered, ``w_j = -W'/2 + (j + 1/2) dw``,
so four-wave index sums ``j1 + j2 - j3 - j`` close without an offset term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class GridError(ValueError):
    """Raised when lattice geometry constraints are violated."""


class ParamError(ValueError):
    """Raised when channel parameters are out of range."""


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform angular-frequency lattice with a centered inner band.

    ``m_inner`` modes span the signal band of width ``w_inner``; the full
    lattice has ``m_total`` modes over ``w_total = w_inner * m_total/m_inner``.
    """

    m_inner: int
    m_total: int
    w_inner: float
    w_total: float
    dw: float
    delta: float

    def omegas(self) -> np.ndarray:
        """Mode frequencies w_j = -W'/2 + (j + 1/2) dw, j = 0..M'-1."""
        j = np.arange(self.m_total)
        w = -0.5 * self.w_total + (j + 0.5) * self.dw
        w.setflags(write=False)
        return w

    @property
    def inner_start(self) -> int:
        return (self.m_total - self.m_inner) // 2

    @property
    def inner_stop(self) -> int:
        return self.inner_start + self.m_inner

    def inner_slice(self) -> slice:
        return slice(self.inner_start, self.inner_stop)

    def inner_mask(self) -> np.ndarray:
        mask = np.zeros(self.m_total, dtype=bool)
        mask[self.inner_slice()] = True
        mask.setflags(write=False)
        return mask

    def is_inner(self, j: int) -> bool:
        return self.inner_start <= j < self.inner_stop


def make_grid(m_inner: int, m_total: int, w_inner: float) -> FrequencyGrid:
    """Build a frequency lattice; validates band nesting and parity.

    Equal spacing requires W/M = W'/M', and the inner band is centered,
    which needs M' - M even.
    """
    if m_inner < 1:
        raise GridError(f"m_inner must be >= 1, got {m_inner}")
    if m_total < m_inner:
        raise GridError(f"m_total must be >= m_inner, got {m_total} < {m_inner}")
    if (m_total - m_inner) % 2 != 0:
        raise GridError(
            f"m_total - m_inner must be even to center the inner band, "
            f"got {m_total} - {m_inner}"
        )
    if not w_inner > 0:
        raise GridError(f"w_inner must be positive, got {w_inner}")
    dw = w_inner / m_inner
    w_total = dw * m_total
    delta = w_inner / (2.0 * np.pi * m_inner)
    return FrequencyGrid(
        m_inner=m_inner,
        m_total=m_total,
        w_inner=float(w_inner),
        w_total=float(w_total),
        dw=float(dw),
        delta=float(delta),
    )


@dataclass(frozen=True)
class ChannelParams:
    """Physical channel parameters on a fixed lattice.

    All quantities are dimensionless internally; any consistent unit system
    is acceptable.  ``q`` is the noise power density per unit length, ``p``
    the input power spectral density, ``l`` the channel length and ``n_z``
    the number of steps of the uniform z lattice.
    """

    beta: float
    gamma: float
    q: float
    l: float
    p: float
    grid: FrequencyGrid
    n_z: int = 64

    def __post_init__(self):
        if not (self.q > 0 and self.l > 0 and self.p > 0):
            raise ParamError("q, l and p must all be positive")
        if self.n_z < 1:
            raise ParamError(f"n_z must be >= 1, got {self.n_z}")

    @property
    def eps(self) -> float:
        """Inverse SNR, eps = Q L / P."""
        return self.q * self.l / self.p

    @property
    def p_ave(self) -> float:
        """Average signal power P W / (2 pi)."""
        return self.p * self.grid.w_inner / (2.0 * np.pi)

    @property
    def p_noise(self) -> float:
        """Accumulated noise power Q L W / (2 pi)."""
        return self.q * self.l * self.grid.w_inner / (2.0 * np.pi)

    @property
    def gamma_tilde(self) -> float:
        """Dimensionless nonlinearity gamma * P_ave * L."""
        return self.gamma * self.p_ave * self.l

    @property
    def beta_tilde(self) -> float:
        """Dimensionless dispersion beta * L * W^2."""
        return self.beta * self.l * self.grid.w_inner**2

    @property
    def dz(self) -> float:
        return self.l / self.n_z

    def z_nodes(self) -> np.ndarray:
        z = np.linspace(0.0, self.l, self.n_z + 1)
        z.setflags(write=False)
        return z


class DerivedParams(NamedTuple):
    eps: float
    gamma_tilde: float
    beta_tilde: float
    p_ave: float
    p_noise: float


def derived_params(params: ChannelParams) -> DerivedParams:
    """Collect the dimensionless quantities derived from ``params``."""
    return DerivedParams(
        eps=params.eps,
        gamma_tilde=params.gamma_tilde,
        beta_tilde=params.beta_tilde,
        p_ave=params.p_ave,
        p_noise=params.p_noise,
    )


@dataclass(frozen=True)
class Spectrum:
    """Complex amplitudes on the full frequency lattice."""

    values: np.ndarray
    grid: FrequencyGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != (self.grid.m_total,):
            raise GridError(
                f"spectrum length {v.shape} does not match lattice size "
                f"({self.grid.m_total},)"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def require_same_grid(self, other: "Spectrum") -> None:
        if self.grid != other.grid:
            raise GridError("spectra live on different lattices")


def spectrum_from(values, grid: FrequencyGrid) -> Spectrum:
    return Spectrum(values=np.asarray(values, dtype=np.complex128), grid=grid)


# -- random generation --------------------------------------------------------
#
# All draws come from counter-based Philox streams keyed by (seed, stream id),
# so results are reproducible bit-for-bit regardless of how work is split
# across threads or batches.

STREAM_INPUT = 0x1A
STREAM_NOISE_B = 0x2B
STREAM_SIM = 0x3C
STREAM_OUTPUT_Y = 0x4D
STREAM_MC = 0x5E


def rng_for(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Philox generator for an independent, addressable substream."""
    seq = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                 spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(seq))


def complex_normal(rng: np.random.Generator, scale2, shape) -> np.ndarray:
    """Circular complex Gaussians with E|z|^2 = scale2 (elementwise)."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return np.sqrt(np.asarray(scale2) / 2.0) * (re + 1j * im)


def sample_input(params: ChannelParams, seed: int) -> Spectrum:
    """Draw an input spectrum: i.i.d. CN(0, P/delta) on the inner band.

    Outer-band modes are exactly zero.  Deterministic in ``seed``.
    """
    g = params.grid
    rng = rng_for(seed, STREAM_INPUT)
    values = np.zeros(g.m_total, dtype=np.complex128)
    values[g.inner_slice()] = complex_normal(rng, params.p / g.delta, g.m_inner)
    return Spectrum(values=values, grid=g)


def sample_b(params: ChannelParams, seed: int) -> Spectrum:
    """Draw a noise-deviation spectrum: i.i.d. CN(0, Q L/delta) on all modes."""
    g = params.grid
    rng = rng_for(seed, STREAM_NOISE_B)
    values = complex_normal(rng, params.q * params.l / g.delta, g.m_total)
    return Spectrum(values=values, grid=g)


def b_from_xy(x: Spectrum, y: Spectrum, params: ChannelParams) -> Spectrum:
    """Dispersion-compensated output deviation B_j = e^{-i b w_j^2 L} Y_j - X_j."""
    x.require_same_grid(y)
    w = x.grid.omegas()
    phase = np.exp(-1j * params.beta * w**2 * params.l)
    return Spectrum(values=phase * y.values - x.values, grid=x.grid)


def band_energy(s: Spectrum, band: str = "all") -> float:
    """Lattice band energy delta * sum_{j in band} |s_j|^2."""
    g = s.grid
    a2 = np.abs(s.values) ** 2
    if band == "all":
        total = a2.sum()
    elif band == "inner":
        total = a2[g.inner_slice()].sum()
    elif band == "outer":
        total = a2.sum() - a2[g.inner_slice()].sum()
    else:
        raise ValueError(f"band must be 'inner', 'outer' or 'all', got {band!r}")
    return float(g.delta * total)
