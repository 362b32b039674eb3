"""Perturbative trajectories on the (z x omega) lattice.

The extremal path with fixed endpoints is expanded in the nonlinearity:
the leading path interpolates between input and dispersion-compensated
output, the first correction is driven by a cubic four-wave source through
the Green function of the second z-derivative.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .domain import ChannelParams, FrequencyGrid, GridError, Spectrum


@dataclass(frozen=True)
class TrajectoryField:
    """Complex field sampled on the (n_z + 1) x M' lattice."""

    values: np.ndarray
    params: ChannelParams

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        expected = (self.params.n_z + 1, self.params.grid.m_total)
        if v.shape != expected:
            raise GridError(f"field shape {v.shape}, lattice wants {expected}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory field contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@lru_cache(maxsize=32)
def _four_wave_triples(m_total: int):
    """Index arrays (j, j1, j2, j3) with j3 = j1 + j2 - j inside the lattice.

    Convolution sums truncate at the band edges; there is no wraparound.
    """
    j, j1, j2 = np.meshgrid(
        np.arange(m_total), np.arange(m_total), np.arange(m_total),
        indexing="ij",
    )
    j3 = j1 + j2 - j
    keep = (j3 >= 0) & (j3 < m_total)
    return (j[keep].copy(), j1[keep].copy(), j2[keep].copy(), j3[keep].copy())


def four_wave_mu_im(grid: FrequencyGrid, beta: float, l: float):
    """(j, j1, j2, j3, Im mu) for all closed quadruples.

    mu = i beta L (w_j^2 + w_j3^2 - w_j1^2 - w_j2^2) is purely imaginary.
    """
    j, j1, j2, j3 = _four_wave_triples(grid.m_total)
    w2 = grid.omegas() ** 2
    mu_im = beta * l * (w2[j] + w2[j3] - w2[j1] - w2[j2])
    return j, j1, j2, j3, mu_im


def psi0(x: Spectrum, b: Spectrum, params: ChannelParams) -> TrajectoryField:
    """Leading-order path e^{i b w^2 z} [ (z/L) B + X ].

    The z = 0 row equals X and the z = L row equals e^{i b w^2 L}(X + B).
    """
    x.require_same_grid(b)
    if x.grid != params.grid:
        raise GridError("spectra and params use different lattices")
    z = params.z_nodes()[:, None]
    w = params.grid.omegas()[None, :]
    phase = np.exp(1j * params.beta * w**2 * z)
    values = phase * ((z / params.l) * b.values[None, :] + x.values[None, :])
    return TrajectoryField(values=values, params=params)


def green(z: float, z_prime: float, l: float) -> float:
    """Green function of d^2/dz^2 with zero endpoints at 0 and L.

    G(z, z') = (z - L) z'/L + (z' - z) theta(z' - z); theta(0) = 1, which is
    inert because G is continuous across the diagonal.
    """
    if not (0.0 <= z <= l and 0.0 <= z_prime <= l):
        raise ValueError(f"green() arguments must lie in [0, {l}]")
    val = (z - l) * z_prime / l
    if z_prime >= z:
        val += z_prime - z
    return float(val)


def _green_matrix(z_nodes: np.ndarray, l: float) -> np.ndarray:
    zc = z_nodes[:, None]
    zp = z_nodes[None, :]
    return (zc - l) * zp / l + (zp - zc) * (zp >= zc)


def _u_factors(x: Spectrum, b: Spectrum, z_over_l: np.ndarray) -> np.ndarray:
    """(n_nodes, M') array u_j(z) = (z/L) B_j + X_j."""
    return z_over_l[:, None] * b.values[None, :] + x.values[None, :]


def _f_lattice(x: Spectrum, b: Spectrum, params: ChannelParams,
               z_nodes: np.ndarray) -> np.ndarray:
    """Four-wave driving term on a set of z nodes, shape (n_nodes, M')."""
    g = params.grid
    j, j1, j2, j3, mu_im = four_wave_mu_im(g, params.beta, params.l)
    s = z_nodes / params.l
    u = _u_factors(x, b, s)                      # (n, M')
    mu = 1j * mu_im                              # (T,)
    phase = np.exp(-np.outer(s, mu_im) * 1j)     # (n, T)
    term = (
        phase
        * u[:, j2]
        * ((4.0 - np.outer(s, mu_im * 1j)) * b.values[j1] - mu[None, :] * x.values[j1])
        * np.conj(u[:, j3])
    )
    out = np.zeros((len(z_nodes), g.m_total), dtype=np.complex128)
    np.add.at(out.T, j, term.T)
    return out * (g.delta**2 / params.l)


def f_omega(x: Spectrum, b: Spectrum, params: ChannelParams, z: float) -> Spectrum:
    """Driving term of the first correction at height z."""
    x.require_same_grid(b)
    values = _f_lattice(x, b, params, np.array([float(z)]))[0]
    return Spectrum(values=values, grid=x.grid)


def _trapezoid_weights(n_nodes: int, dz: float) -> np.ndarray:
    w = np.full(n_nodes, dz)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def psi1(x: Spectrum, b: Spectrum, params: ChannelParams) -> TrajectoryField:
    """First correction i gamma e^{i b w^2 z} int_0^L G(z, z') F_w(z') dz'.

    Composite trapezoid over the uniform z lattice; the rows at z = 0 and
    z = L vanish because G does.
    """
    x.require_same_grid(b)
    if x.grid != params.grid:
        raise GridError("spectra and params use different lattices")
    z = params.z_nodes()
    f = _f_lattice(x, b, params, z)              # (n+1, M')
    gmat = _green_matrix(z, params.l)            # (n+1, n+1)
    w = _trapezoid_weights(len(z), params.dz)
    integral = (gmat * w[None, :]) @ f           # (n+1, M')
    wsq = params.grid.omegas()[None, :] ** 2
    phase = np.exp(1j * params.beta * wsq * z[:, None])
    values = 1j * params.gamma * phase * integral
    # endpoint rows are exactly zero: G(0, .) = G(L, .) = 0
    values[0, :] = 0.0
    values[-1, :] = 0.0
    return TrajectoryField(values=values, params=params)
