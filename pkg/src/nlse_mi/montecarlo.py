"""Monte-Carlo estimation of the mutual-information decomposition.

Estimators draw from counter-based substreams (one per batch) so runs are
reproducible bit-for-bit under any execution order, support common random
numbers across noise levels, and can optionally Rao-Blackwellize the
noise-field average through the exact contraction engine when the lattice
is small enough.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import wick
from ._zseries import iexp, mu_unit
from .domain import (
    ChannelParams,
    STREAM_MC,
    STREAM_OUTPUT_Y,
    complex_normal,
    rng_for,
)
from .trajectory import four_wave_mu_im


@dataclass(frozen=True)
class MCEstimate:
    """Batch-means Monte-Carlo estimate."""

    mean: float
    stderr: float
    n: int
    seed: int

    def within(self, target: float, n_sigma: float = 3.0) -> bool:
        return abs(self.mean - target) <= n_sigma * self.stderr


class SampleQualityError(RuntimeError):
    """Raised when more than 0.1% of functional evaluations are non-finite."""


_N_BATCHES = 64


def _standard_batch(params: ChannelParams, seed: int, idx: int, per: int):
    """Standard complex normal draws (unit E|z|^2) for one batch index."""
    g = params.grid
    rng = rng_for(seed, STREAM_MC, idx)
    xz = complex_normal(rng, 1.0, (per, g.m_inner))
    bz = complex_normal(rng, 1.0, (per, g.m_total))
    return xz, bz


def _fields_from_standard(params: ChannelParams, xz, bz):
    g = params.grid
    x = np.zeros((xz.shape[0], g.m_total), dtype=complex)
    x[:, g.inner_slice()] = np.sqrt(params.p / g.delta) * xz
    b = np.sqrt(params.q * params.l / g.delta) * bz
    return x, b


def estimate(functional, params: ChannelParams, n: int, seed: int,
             n_batches: int = _N_BATCHES) -> MCEstimate:
    """Batch-means estimate of E[functional(X, B)] over the Gaussian fields.

    ``functional(x_batch, b_batch, params)`` maps (n_b, M') field arrays to
    an (n_b,) array.  Deterministic in (params, n, seed); aborts if more
    than 0.1% of the evaluations are non-finite.
    """
    if n < 1024:
        raise ValueError(f"n must be >= 1024, got {n}")
    per = n // n_batches
    means = []
    bad = 0
    total = 0
    for idx in range(n_batches):
        xz, bz = _standard_batch(params, seed, idx, per)
        x, b = _fields_from_standard(params, xz, bz)
        vals = np.asarray(functional(x, b, params), dtype=float)
        finite = np.isfinite(vals)
        bad += int((~finite).sum())
        total += vals.size
        means.append(vals[finite].mean() if finite.any() else np.nan)
    if bad > 1e-3 * total:
        raise SampleQualityError(f"{bad}/{total} non-finite functional values")
    means = np.asarray(means)
    return MCEstimate(
        mean=float(means.mean()),
        stderr=float(means.std(ddof=1) / np.sqrt(len(means))),
        n=total,
        seed=seed,
    )


# -- closed-z-form per-sample functionals ---------------------------------------

def s1_hat_batch(x: np.ndarray, b: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Gamma-stripped first-order action per sample, exact z integrals."""
    g = params.grid
    j, j1, j2, j3, mu_im = four_wave_mu_im(g, params.beta, params.l)
    out = np.zeros(x.shape[0], dtype=complex)
    xc = np.conj(x)
    bc = np.conj(b)
    for t in range(len(j)):
        mu = 1j * mu_im[t]
        f1, f2, f3 = xc[:, j1[t]], xc[:, j2[t]], x[:, j3[t]]
        g1, g2, g3 = bc[:, j1[t]], bc[:, j2[t]], b[:, j3[t]]
        ivals = [iexp(p, mu) for p in range(4)]
        acc = (
            ivals[0] * f1 * f2 * f3
            + ivals[1] * (g1 * f2 * f3 + f1 * g2 * f3 + f1 * f2 * g3)
            + ivals[2] * (g1 * g2 * f3 + g1 * f2 * g3 + f1 * g2 * g3)
            + ivals[3] * g1 * g2 * g3
        )
        out += b[:, j[t]] * acc
    return np.real(2j * g.delta**3 * out)


def gamma10_batch(x: np.ndarray, b: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Closed-form prefactor coefficient per sample."""
    g = params.grid
    im = np.sum(np.imag(b * np.conj(x)), axis=1)
    return g.w_total / (3.0 * np.pi * params.p_ave) * g.delta * im


def _gl_unit(n_nodes: int):
    xg, wg = np.polynomial.legendre.leggauss(n_nodes)
    return 0.5 * (xg + 1.0), 0.5 * wg


def _s2_node_tables(params: ChannelParams, n_nodes: int):
    """Per-(triple, power, node) scalar kernels for the s2 quadrature."""
    g = params.grid
    j, j1, j2, j3, mu_im = four_wave_mu_im(g, params.beta, params.l)
    s, w = _gl_unit(n_nodes)
    ntrip = len(j)
    wprime = np.empty((ntrip, 4, n_nodes), dtype=complex)
    wgreen = np.empty((ntrip, 4, n_nodes), dtype=complex)
    vker = np.empty((ntrip, 4, n_nodes), dtype=complex)
    phase_pos = np.empty((ntrip, n_nodes), dtype=complex)
    for t in range(ntrip):
        mu = 1j * mu_im[t]
        emus = np.exp(-mu * s)
        phase_pos[t] = np.exp(mu * s)
        jp = [s ** (p + 1) * np.array([iexp(p, -mu * si) for si in s])
              for p in range(5)]
        cp = [iexp(p + 1, -mu) - iexp(p, -mu) for p in range(4)]
        for p in range(4):
            wprime[t, p] = jp[p] + cp[p]
            wgreen[t, p] = -jp[p + 1] + s * jp[p] + s * cp[p]
            vker[t, p] = emus * s**p
    return (j, j1, j2, j3, mu_im), s, w, wprime, wgreen, vker, phase_pos


def s2_hat_batch(x: np.ndarray, b: np.ndarray, params: ChannelParams,
                 n_nodes: int = 16, chunk: int = 4096) -> np.ndarray:
    """Gamma-stripped second-order action per sample.

    z integrals run on Gauss-Legendre nodes of [0, 1]: exact at zero
    dispersion (polynomial integrands of degree <= 8) and spectrally
    accurate otherwise.  The Green-kernel antiderivatives are closed-form
    per node, J_p(s; mu) = s^{p+1} I_p(-mu s).
    """
    g = params.grid
    (j, j1, j2, j3, mu_im), s_nodes, s_wts, wprime, wgreen, vker, phase_pos = \
        _s2_node_tables(params, n_nodes)
    ntrip = len(j)
    mt = g.m_total
    delta = g.delta
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], chunk):
        xs = x[lo : lo + chunk]
        bs = b[lo : lo + chunk]
        ns = xs.shape[0]
        xc, bc = np.conj(xs), np.conj(bs)
        # t-power coefficients of F (P) and of the cubic term (R), per triple
        pcoef = np.empty((ntrip, 4, ns), dtype=complex)
        rcoef = np.empty((ntrip, 4, ns), dtype=complex)
        for t in range(ntrip):
            mu = 1j * mu_im[t]
            x1, b1 = xs[:, j1[t]], bs[:, j1[t]]
            x2, b2 = xs[:, j2[t]], bs[:, j2[t]]
            x3c, b3c = xc[:, j3[t]], bc[:, j3[t]]
            aa = 4.0 * b1 - mu * x1
            bbp = -mu * b1
            pcoef[t, 0] = x2 * aa * x3c
            pcoef[t, 1] = b2 * aa * x3c + x2 * bbp * x3c + x2 * aa * b3c
            pcoef[t, 2] = b2 * bbp * x3c + b2 * aa * b3c + x2 * bbp * b3c
            pcoef[t, 3] = b2 * bbp * b3c
            rcoef[t, 0] = x1 * x2 * x3c
            rcoef[t, 1] = b1 * x2 * x3c + x1 * b2 * x3c + x1 * x2 * b3c
            rcoef[t, 2] = b1 * b2 * x3c + b1 * x2 * b3c + x1 * b2 * b3c
            rcoef[t, 3] = b1 * b2 * b3c
        first = np.zeros(ns)
        cross = np.zeros(ns)
        for si in range(len(s_nodes)):
            h = np.zeros((ns, mt), dtype=complex)
            phi = np.zeros((ns, mt), dtype=complex)
            for t in range(ntrip):
                jt = j[t]
                acc_h = (
                    pcoef[t, 0] * wprime[t, 0, si]
                    + pcoef[t, 1] * wprime[t, 1, si]
                    + pcoef[t, 2] * wprime[t, 2, si]
                    + pcoef[t, 3] * wprime[t, 3, si]
                    - rcoef[t, 0] * vker[t, 0, si]
                    - rcoef[t, 1] * vker[t, 1, si]
                    - rcoef[t, 2] * vker[t, 2, si]
                    - rcoef[t, 3] * vker[t, 3, si]
                )
                h[:, jt] += acc_h
                phi[:, jt] += (
                    pcoef[t, 0] * wgreen[t, 0, si]
                    + pcoef[t, 1] * wgreen[t, 1, si]
                    + pcoef[t, 2] * wgreen[t, 2, si]
                    + pcoef[t, 3] * wgreen[t, 3, si]
                )
            first += s_wts[si] * np.sum(np.abs(h) ** 2, axis=1)
            sv = s_nodes[si]
            us = xs + sv * bs
            ucs = np.conj(us)
            phic = np.conj(phi)
            t_acc = np.zeros(ns, dtype=complex)
            for t in range(ntrip):
                term = (
                    2.0 * phic[:, j1[t]] * ucs[:, j2[t]] * us[:, j3[t]]
                    - phi[:, j3[t]] * ucs[:, j1[t]] * ucs[:, j2[t]]
                )
                t_acc += phase_pos[t, si] * bs[:, j[t]] * term
            cross += s_wts[si] * np.real(t_acc)
        out[lo : lo + chunk] = params.l * delta**5 * (first + 2.0 * cross)
    return out


def alpha1_batch(x: np.ndarray, b: np.ndarray, params: ChannelParams) -> np.ndarray:
    """First-order density correction per sample."""
    gt = params.gamma_tilde
    if gt == 0.0:
        return np.zeros(x.shape[0])
    a01_part = -params.gamma * s1_hat_batch(x, b, params) / params.q
    return a01_part + gt * gamma10_batch(x, b, params)


def alpha2_partial_batch(x: np.ndarray, b: np.ndarray,
                         params: ChannelParams) -> np.ndarray:
    """Second-order collections (gamma_tilde/eps)^2 and gamma_tilde^2/eps."""
    gt = params.gamma_tilde
    if gt == 0.0:
        return np.zeros(x.shape[0])
    s1h = s1_hat_batch(x, b, params)
    g10 = gamma10_batch(x, b, params)
    a01q = -params.gamma * s1h / params.q
    a11q = -params.gamma**2 * s2_hat_batch(x, b, params) / params.q
    return 0.5 * a01q**2 + a11q + a01q * gt * g10


def log_ratio_bracket_batch(x: np.ndarray, b: np.ndarray,
                            params: ChannelParams) -> np.ndarray:
    """log P0[Y|X] - log P0_out[Y] - M log(1 + 1/eps), per sample.

    Evaluated directly from the log densities (underflow-safe); equals the
    band-weighted quadratic bracket of the I2 integrand.
    """
    g = params.grid
    ql = params.q * params.l
    y2 = np.abs(x + b) ** 2
    inner = g.inner_mask()
    t_in = g.delta * y2[:, inner].sum(axis=1)
    t_out = g.delta * y2[:, ~inner].sum(axis=1)
    t_b = g.delta * np.sum(np.abs(b) ** 2, axis=1)
    return t_in / (params.p + ql) + t_out / ql - t_b / ql


def _zero_estimate(n: int, seed: int) -> MCEstimate:
    return MCEstimate(mean=0.0, stderr=0.0, n=n, seed=seed)


def mc_mutual_information(params: ChannelParams, n: int, seed: int,
                          rao_blackwell: bool = False,
                          include_alpha2: bool = True) -> dict:
    """Monte-Carlo decomposition {i0, i1, i2, i3, total}.

    i0 is analytic (zero variance).  The plain path samples (X, B) and
    evaluates the integrands with the closed-z-form action functionals;
    the Rao-Blackwell path replaces the B average by its exact partial
    contraction (lattices up to the engine guard) and samples only X.
    i3 vanishes identically for W' = W and is estimated from output-field
    samples otherwise.
    """
    g = params.grid
    eps = params.eps
    i0_val = g.m_inner * float(np.log1p(1.0 / eps))
    i0 = MCEstimate(mean=i0_val, stderr=0.0, n=n, seed=seed)

    if params.gamma == 0.0:
        zero = _zero_estimate(n, seed)
        return {"i0": i0, "i1": zero, "i2": zero, "i1_plus_i2": zero,
                "i3": zero, "total": MCEstimate(i0_val, 0.0, n, seed)}

    if rao_blackwell:
        exprs = wick.rb_exprs(params)
        per = n // _N_BATCHES
        m1, m2 = [], []
        for idx in range(_N_BATCHES):
            xz, _ = _standard_batch(params, seed, idx, per)
            x = np.sqrt(params.p / g.delta) * xz
            m1.append(np.real(wick.evaluate_x_batch(exprs["i1"], x, params.q)).mean())
            m2.append(np.real(wick.evaluate_x_batch(exprs["i2"], x, params.q)).mean())
        m1, m2 = np.asarray(m1), np.asarray(m2)
        nb = np.sqrt(_N_BATCHES)
        i1 = MCEstimate(float(m1.mean()), float(m1.std(ddof=1) / nb), n, seed)
        i2 = MCEstimate(float(m2.mean()), float(m2.std(ddof=1) / nb), n, seed)
        msum = m1 + m2
        i12 = MCEstimate(float(msum.mean()), float(msum.std(ddof=1) / nb), n, seed)
    else:
        def f_i1(x, b, p):
            a1 = alpha1_batch(x, b, p)
            return 0.5 * a1**2

        def f_i2(x, b, p):
            a1 = alpha1_batch(x, b, p)
            a2 = alpha2_partial_batch(x, b, p) if include_alpha2 \
                else np.zeros_like(a1)
            return log_ratio_bracket_batch(x, b, p) * (1.0 + a1 + a2)

        # identical substreams: the three estimates share every field draw
        i1 = estimate(f_i1, params, n, seed)
        i2 = estimate(f_i2, params, n, seed)
        i12 = estimate(lambda x, b, p: f_i1(x, b, p) + f_i2(x, b, p),
                       params, n, seed)

    i3 = _estimate_i3(params, n, seed)
    total = MCEstimate(
        mean=i0.mean + i12.mean + i3.mean,
        stderr=float(np.sqrt(i12.stderr**2 + i3.stderr**2)),
        n=n, seed=seed,
    )
    return {"i0": i0, "i1": i1, "i2": i2, "i1_plus_i2": i12, "i3": i3,
            "total": total}


def _estimate_i3(params: ChannelParams, n: int, seed: int) -> MCEstimate:
    """-(1/2) E[beta1(Y)^2] under the leading output density."""
    g = params.grid
    if g.m_total == g.m_inner or params.gamma == 0.0:
        return _zero_estimate(n, seed)
    expr = wick.build_beta1_expr(params)
    ql = params.q * params.l
    var = np.where(g.inner_mask(), (params.p + ql) / g.delta, ql / g.delta)
    per = n // _N_BATCHES
    means = []
    for idx in range(_N_BATCHES):
        rng = rng_for(seed, STREAM_OUTPUT_Y, idx)
        y = complex_normal(rng, var[None, :], (per, g.m_total))
        yc = np.conj(y)
        vals = np.zeros(per, dtype=complex)
        for factors, coeff in expr.terms.items():
            term = np.full(per, wick.qs_eval(coeff, params.q), dtype=complex)
            for code in factors:
                kind, mode = wick.unpack(code)
                term = term * (y[:, mode] if kind == wick.KIND_Y else yc[:, mode])
            vals += term
        means.append(float(np.mean(-0.5 * np.real(vals) ** 2)))
    means = np.asarray(means)
    return MCEstimate(float(means.mean()),
                      float(means.std(ddof=1) / np.sqrt(_N_BATCHES)),
                      n, seed)


def singular_coefficient_fit(params: ChannelParams, eps_list, n: int,
                             seed: int) -> dict:
    """Weighted least-squares slope of I1 against gamma_tilde^2/eps.

    Common random numbers across the eps sweep: the same standardized
    field draws are rescaled per noise level, and the first-order density
    coefficient is reassembled from B-degree sectors, so the sweep costs
    one evaluation pass.
    """
    eps_list = sorted(set(float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 3:
        raise ValueError("need at least 3 distinct eps values")
    if max(eps_list) / min(eps_list) < 10.0 - 1e-9:
        raise ValueError("eps values should span at least one decade")
    g = params.grid
    gt = params.gamma_tilde
    a1x = wick.expr_real(wick._s1_hat_w_expr(params))
    g10x = wick.build_gamma10_expr(params)

    per = n // _N_BATCHES
    sums = {e: [] for e in eps_list}
    for idx in range(_N_BATCHES):
        xz, bz = _standard_batch(params, seed, idx, per)
        x = np.zeros((per, g.m_total), dtype=complex)
        x[:, g.inner_slice()] = np.sqrt(params.p / g.delta) * xz
        s1_sec = wick.evaluate_xb_sectors(a1x, x, bz)
        g10_sec = wick.evaluate_xb_sectors(g10x, x, bz)
        for e in eps_list:
            q = e * params.p / params.l
            sigma = np.sqrt(q * params.l / g.delta)
            s1h = np.real(wick.combine_sectors(s1_sec, sigma, 1.0))
            g10 = np.real(wick.combine_sectors(g10_sec, sigma, 1.0))
            a1 = -params.gamma * s1h / q + gt * g10
            sums[e].append(float(np.mean(0.5 * a1**2)))

    xs, ys, ws = [], [], []
    estimates = {}
    for e in eps_list:
        m = np.asarray(sums[e])
        mean = float(m.mean())
        err = float(m.std(ddof=1) / np.sqrt(_N_BATCHES))
        estimates[e] = MCEstimate(mean, err, n, seed)
        xs.append(gt**2 / e)
        ys.append(mean)
        ws.append(1.0 / max(err, 1e-300) ** 2)
    xs, ys, ws = map(np.asarray, (xs, ys, ws))
    if np.ptp(xs) == 0.0:
        raise ValueError("ill-conditioned design: identical eps values")
    design = np.stack([xs, np.ones_like(xs)], axis=1)
    wd = design * ws[:, None]
    cov = np.linalg.inv(wd.T @ design)
    beta = cov @ (wd.T @ ys)
    fit = design @ beta
    slope_err = float(np.sqrt(cov[0, 0]))
    return {
        "slope": MCEstimate(float(beta[0]), slope_err, n, seed),
        "intercept": float(beta[1]),
        "residual": float(np.sqrt(np.average((ys - fit) ** 2, weights=ws))),
        "estimates": estimates,
    }
