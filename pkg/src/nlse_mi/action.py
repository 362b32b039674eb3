"""Action functionals, expansion coefficients and Gaussian densities.

The action of a path splits by powers of the nonlinearity into s0, s1, s2.
Their sign conventions follow the expansion of |L0[psi] - V[psi]|^2 around
the extremal path: the first-order term carries an overall minus sign,
which is required for s0 + s1 + s2 to vanish at cubic order on noiseless
channel outputs (see tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._zseries import ZContext, mu_integer, mu_unit
from .domain import ChannelParams, GridError, Spectrum, band_energy
from .trajectory import (
    TrajectoryField,
    _trapezoid_weights,
    four_wave_mu_im,
    psi0,
    psi1,
)


# -- linear operator and cubic term -------------------------------------------

def linop_l0(field: TrajectoryField, params: ChannelParams) -> TrajectoryField:
    """d/dz - i beta w^2, centered differences inside, one-sided at the ends."""
    if params.n_z < 2:
        raise GridError("linop_l0 needs n_z >= 2")
    v = field.values
    dz = params.dz
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2.0 * dz)
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dz)
    d[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dz)
    w2 = params.grid.omegas()[None, :] ** 2
    return TrajectoryField(values=d - 1j * params.beta * w2 * v, params=params)


def linop_l0_psi0(b: Spectrum, params: ChannelParams) -> TrajectoryField:
    """Exact image of the leading path: e^{i beta w^2 z} B / L."""
    z = params.z_nodes()[:, None]
    w2 = params.grid.omegas()[None, :] ** 2
    values = np.exp(1j * params.beta * w2 * z) * b.values[None, :] / params.l
    return TrajectoryField(values=values, params=params)


def _v_lattice(values: np.ndarray, params: ChannelParams,
               gamma: float | None = None) -> np.ndarray:
    """Cubic term rows V_j = i gamma delta^2 sum psi_j1 psi_j2 conj(psi_j3)."""
    g = params.grid
    gam = params.gamma if gamma is None else gamma
    j, j1, j2, j3, _ = four_wave_mu_im(g, params.beta, params.l)
    term = values[:, j1] * values[:, j2] * np.conj(values[:, j3])
    out = np.zeros_like(values)
    np.add.at(out.T, j, term.T)
    return 1j * gam * g.delta**2 * out


def v_of(field: TrajectoryField, params: ChannelParams, z_index: int) -> Spectrum:
    """Cubic four-wave term of one lattice row."""
    row = field.values[z_index : z_index + 1]
    return Spectrum(values=_v_lattice(row, params)[0], grid=params.grid)


# -- action orders -------------------------------------------------------------

def s0(b: Spectrum, params: ChannelParams) -> float:
    """Leading action (1/L) * delta * sum_j |B_j|^2."""
    return band_energy(b, "all") / params.l


def _s1_hat(x: Spectrum, b: Spectrum, params: ChannelParams) -> float:
    """First-order action divided by gamma (finite at gamma = 0)."""
    p0 = psi0(x, b, params)
    v = _v_lattice(p0.values, params, gamma=1.0)
    z = params.z_nodes()[:, None]
    w2 = params.grid.omegas()[None, :] ** 2
    lhs = np.exp(1j * params.beta * w2 * z) * b.values[None, :]
    integrand = params.grid.delta * np.sum(np.real(lhs * np.conj(v)), axis=1)
    wts = _trapezoid_weights(len(integrand), params.dz)
    return float(-2.0 / params.l * np.dot(wts, integrand))


def s1(x: Spectrum, b: Spectrum, params: ChannelParams) -> float:
    """First-order action term; scales linearly with gamma."""
    x.require_same_grid(b)
    return params.gamma * _s1_hat(x, b, params)


def _s2_hat(x: Spectrum, b: Spectrum, params: ChannelParams) -> float:
    """Second-order action divided by gamma^2 (finite at gamma = 0)."""
    unit = ChannelParams(beta=params.beta, gamma=1.0, q=params.q, l=params.l,
                         p=params.p, grid=params.grid, n_z=params.n_z)
    p0 = psi0(x, b, unit)
    p1 = psi1(x, b, unit)
    v0 = _v_lattice(p0.values, unit)             # gamma = 1
    l0p1 = linop_l0(p1, unit).values
    delta = params.grid.delta
    wts = _trapezoid_weights(params.n_z + 1, params.dz)

    first = delta * np.sum(np.abs(l0p1 - v0) ** 2, axis=1)

    # cross term with the linearized cubic operator
    g = params.grid
    j, j1, j2, j3, _ = four_wave_mu_im(g, params.beta, params.l)
    a0 = p0.values
    a1 = p1.values
    v1_rows = 2.0 * a1[:, j1] * a0[:, j2] * np.conj(a0[:, j3]) \
        + np.conj(a1[:, j3]) * a0[:, j1] * a0[:, j2]
    v1 = np.zeros_like(a0)
    np.add.at(v1.T, j, v1_rows.T)
    v1 *= 1j * delta**2
    lhs = linop_l0_psi0(b, unit).values
    second = -2.0 * delta * np.sum(np.real(lhs * np.conj(v1)), axis=1)

    return float(np.dot(wts, first + second))


def s2(x: Spectrum, b: Spectrum, params: ChannelParams) -> float:
    """Second-order action term; scales with gamma^2."""
    x.require_same_grid(b)
    return params.gamma**2 * _s2_hat(x, b, params)


# -- expansion coefficients ----------------------------------------------------

def alpha01(x: Spectrum, b: Spectrum, params: ChannelParams) -> float:
    """Coefficient of (gamma_tilde / eps) in the conditional-density expansion.

    Defined so that alpha01 * (gamma_tilde/eps) * Q + s1 = 0; the gamma
    linearity of s1 is divided out analytically, so gamma = 0 is fine.
    """
    w = params.grid.w_inner
    return float(-2.0 * np.pi * _s1_hat(x, b, params) / (params.p**2 * w))


def alpha02(x: Spectrum, b: Spectrum, params: ChannelParams) -> float:
    """Coefficient of (gamma_tilde / eps)^2: half the square of alpha01."""
    a = alpha01(x, b, params)
    return 0.5 * a * a


def alpha11(x: Spectrum, b: Spectrum, params: ChannelParams) -> float:
    """Coefficient of gamma_tilde^2 / eps from the second-order action.

    alpha11 * gamma_tilde^2 = -(L W / (2 pi P_ave)) * s2 reduces, because s2
    is exactly quadratic in gamma, to -(L/P) s2 / gamma_tilde^2.
    """
    w = params.grid.w_inner
    return float(-4.0 * np.pi**2 * _s2_hat(x, b, params)
                 / (params.p**3 * params.l * w**2))


def gamma10(x: Spectrum, b: Spectrum, params: ChannelParams,
            method: str = "closed") -> float:
    """Order-gamma_tilde coefficient from the path-integral prefactor.

    ``closed`` evaluates (W'/(3 pi P_ave)) delta sum Im(B_j conj(X_j)),
    obtained from the z integral of z(L-z)/L against the exact linear-
    operator image; ``quadrature`` does that z integral on the lattice.
    """
    x.require_same_grid(b)
    g = params.grid
    if method == "closed":
        im = float(np.sum(np.imag(b.values * np.conj(x.values))))
        return g.w_total / (3.0 * np.pi * params.p_ave) * g.delta * im
    if method == "quadrature":
        z = params.z_nodes()
        lhs = linop_l0_psi0(b, params).values
        p0 = psi0(x, b, params).values
        rows = g.delta * np.sum(lhs * np.conj(p0), axis=1)
        wts = _trapezoid_weights(len(z), params.dz)
        integral = np.dot(wts, z * (params.l - z) / params.l * rows)
        return float(2.0 * g.w_total / (np.pi * params.l * params.p_ave)
                     * np.imag(integral))
    raise ValueError(f"unknown method {method!r}")


# -- Gaussian densities --------------------------------------------------------

class DensityValue(NamedTuple):
    density: float
    log_density: float


def p0_conditional(b: Spectrum, params: ChannelParams) -> DensityValue:
    """Leading conditional density of the output, as a function of B.

    Log form is primary; the plain density underflows quickly with many
    modes.
    """
    g = b.grid
    ql = params.q * params.l
    log_density = g.m_total * np.log(g.delta / (np.pi * ql)) \
        - (g.delta / ql) * float(np.sum(np.abs(b.values) ** 2))
    return DensityValue(density=float(np.exp(log_density)),
                        log_density=float(log_density))


def p0_out(y: Spectrum, params: ChannelParams) -> DensityValue:
    """Leading output density: inner modes CN(0, (P+QL)/delta), outer CN(0, QL/delta)."""
    g = y.grid
    ql = params.q * params.l
    inner = band_energy(y, "inner")
    outer = band_energy(y, "outer")
    log_density = (
        (g.m_total - g.m_inner) * np.log(g.delta / (np.pi * ql))
        + g.m_inner * np.log(g.delta / (np.pi * (params.p + ql)))
        - outer / ql
        - inner / (params.p + ql)
    )
    return DensityValue(density=float(np.exp(log_density)),
                        log_density=float(log_density))


def beta1(y: Spectrum, params: ChannelParams) -> float:
    """First-order correction of the output density; zero whenever W' = W.

    Quadruple lattice sum with band-indicator weights and exact z
    integration of the e^{mu (z/L - 1)} factors.  The antisymmetrized sum
    is real; the imaginary residue is checked and discarded.
    """
    if y.grid != params.grid:
        raise GridError("spectrum and params use different lattices")
    g = params.grid
    if g.m_total == g.m_inner:
        return 0.0
    if params.gamma == 0.0:
        return 0.0
    j, j1, j2, j3, _ = four_wave_mu_im(g, params.beta, params.l)
    kint = mu_integer(g.m_total, j, j3, j1, j2)
    inner = g.inner_mask().astype(float)
    outer = 1.0 - inner
    bracket = outer[j] * inner[j1] - outer[j1] * inner[j]
    keep = bracket != 0.0
    if not np.any(keep):
        return 0.0
    j, j1, j2, j3, kint, bracket = (a[keep] for a in (j, j1, j2, j3, kint, bracket))

    ql = params.q * params.l
    ratio = ql / (params.p + ql)
    # weight(s) = c0 + c1 s per mode class
    c0 = inner * (1.0 - ratio)
    c1 = outer + inner * ratio
    p0c = c0[j2] * c0[j3]
    p1c = c0[j2] * c1[j3] + c1[j2] * c0[j3]
    p2c = c1[j2] * c1[j3]

    ctx = ZContext(mu_unit(params.beta, params.l, g.dw))
    zints = np.empty(len(j), dtype=np.complex128)
    for t in range(len(j)):
        k = int(kint[t])
        mu = ctx.nu_of(k)
        val = (p0c[t] * ctx.i_of(0, k) + p1c[t] * ctx.i_of(1, k)
               + p2c[t] * ctx.i_of(2, k))
        zints[t] = np.exp(-mu) * val

    yv = y.values
    prod = yv[j] * yv[j3] * np.conj(yv[j1]) * np.conj(yv[j2])
    total = np.sum(prod * bracket * zints) / 2j
    pref = 2.0 * params.gamma * params.p / (params.q * (params.p + ql))
    total *= pref * g.delta**3
    scale = max(1.0, abs(total))
    if abs(total.imag) > 1e-10 * scale:
        raise FloatingPointError(
            f"beta1 imaginary residue {total.imag:.3e} exceeds tolerance"
        )
    return float(total.real)


# -- truncated conditional-density expansion -----------------------------------

@dataclass(frozen=True)
class PdfExpansionTerms:
    """Leading density with first- and (partial) second-order collections.

    ``alpha2_partial`` holds the (gamma_tilde/eps)^2 and gamma_tilde^2/eps
    collections only; the plain gamma_tilde^2 collection of the prefactor
    expansion has no closed form here and is excluded by construction.
    """

    p0: float
    alpha1: float
    alpha2_partial: float
    log_p0: float

    @property
    def density(self) -> float:
        return self.p0 * (1.0 + self.alpha1 + self.alpha2_partial)


def pdf_expansion(x: Spectrum, y: Spectrum, params: ChannelParams) -> PdfExpansionTerms:
    """Assemble the truncated conditional-density expansion at output y."""
    from .domain import b_from_xy

    b = b_from_xy(x, y, params)
    base = p0_conditional(b, params)
    gt = params.gamma_tilde
    eps = params.eps
    a01 = alpha01(x, b, params)
    g10 = gamma10(x, b, params)
    a1 = a01 * (gt / eps) + g10 * gt
    a11 = alpha11(x, b, params)
    a2 = 0.5 * a01 * a01 * (gt / eps) ** 2 + (a11 + a01 * g10) * gt**2 / eps
    return PdfExpansionTerms(p0=base.density, alpha1=a1, alpha2_partial=a2,
                             log_p0=base.log_density)
