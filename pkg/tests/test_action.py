import numpy as np
import pytest

from nlse_mi.action import (
    alpha01,
    alpha02,
    alpha11,
    beta1,
    gamma10,
    linop_l0,
    linop_l0_psi0,
    p0_conditional,
    p0_out,
    pdf_expansion,
    s0,
    s1,
    s2,
    v_of,
)
from nlse_mi.domain import (
    ChannelParams,
    Spectrum,
    b_from_xy,
    make_grid,
    sample_b,
    sample_input,
)
from nlse_mi.trajectory import psi0

from conftest import params_for


def fields(p, sx=1, sb=2, bscale=1.0):
    x = sample_input(p, sx)
    b = Spectrum(values=bscale * sample_b(p, sb).values, grid=p.grid)
    return x, b


class TestLinop:
    def test_constant_field_beta_zero(self):
        p = params_for(2, 2, beta_tilde=0.0, n_z=16)
        from nlse_mi.trajectory import TrajectoryField
        field = TrajectoryField(values=np.ones((17, 2), dtype=complex), params=p)
        assert np.allclose(linop_l0(field, p).values, 0.0, atol=1e-12)

    def test_analytic_path(self):
        p = params_for(3, 3, beta_tilde=1.3, n_z=32)
        x, b = fields(p)
        lhs = linop_l0_psi0(b, p).values
        z = p.z_nodes()[:, None]
        w2 = p.grid.omegas()[None, :] ** 2
        np.testing.assert_allclose(
            lhs, np.exp(1j * p.beta * w2 * z) * b.values[None, :] / p.l,
            rtol=1e-14)

    def test_fd_vs_analytic_convergence(self):
        errs = []
        for n_z in (32, 64):
            p = params_for(3, 3, beta_tilde=1.3, n_z=n_z)
            x, b = fields(p)
            fd = linop_l0(psi0(x, b, p), p).values
            an = linop_l0_psi0(b, p).values
            errs.append(np.abs(fd - an).max())
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.25)


class TestVOf:
    def test_zero_field(self):
        p = params_for(2, 2, n_z=4)
        from nlse_mi.trajectory import TrajectoryField
        z = TrajectoryField(values=np.zeros((5, 2), dtype=complex), params=p)
        assert np.all(v_of(z, p, 0).values == 0)

    def test_gamma_zero(self):
        p = params_for(2, 2, gamma=0.0, n_z=4)
        x, b = fields(p)
        assert np.all(v_of(psi0(x, b, p), p, 2).values == 0)

    def test_brute_force(self):
        # field (1, i) on two modes: exhaustive 4-term sums per output mode
        grid = make_grid(2, 2, 1.0)
        p = ChannelParams(beta=0.0, gamma=0.3, q=0.01, l=1.0, p=1.0,
                          grid=grid, n_z=4)
        from nlse_mi.trajectory import TrajectoryField
        row = np.array([1.0 + 0j, 1j])
        field = TrajectoryField(values=np.tile(row, (5, 1)), params=p)
        got = v_of(field, p, 0).values
        expected = np.zeros(2, dtype=complex)
        for j in range(2):
            for j1 in range(2):
                for j2 in range(2):
                    j3 = j1 + j2 - j
                    if 0 <= j3 < 2:
                        expected[j] += row[j1] * row[j2] * np.conj(row[j3])
        expected *= 1j * p.gamma * grid.delta**2
        np.testing.assert_allclose(got, expected, rtol=1e-14)


class TestActionOrders:
    def test_s0_zero(self):
        p = params_for(2, 2)
        assert s0(Spectrum(values=np.zeros(2), grid=p.grid), p) == 0.0

    def test_s0_single_mode(self):
        grid = make_grid(1, 1, 2 * np.pi * 0.25)
        p = ChannelParams(beta=0.0, gamma=0.0, q=0.01, l=2.0, p=1.0, grid=grid)
        b = Spectrum(values=np.array([2.0 + 0j]), grid=grid)
        assert s0(b, p) == pytest.approx(0.5, rel=1e-15)

    def test_s0_density_consistency(self):
        # log p0 = log Lambda - s0/Q
        p = params_for(3, 3, eps=0.03)
        _, b = fields(p)
        d = p0_conditional(b, p)
        lam = p.grid.m_total * np.log(p.grid.delta / (np.pi * p.q * p.l))
        assert d.log_density == pytest.approx(lam - s0(b, p) / p.q, rel=1e-12)

    def test_s1_trivial_zeros(self):
        p = params_for(2, 2, gamma=0.0)
        x, b = fields(p)
        assert s1(x, b, p) == 0.0
        p2 = params_for(2, 2, gamma=0.3)
        zero = Spectrum(values=np.zeros(2), grid=p2.grid)
        assert s1(x, zero, p2) == pytest.approx(0.0, abs=1e-15)

    def test_s1_independent_oracle(self):
        # dense, loop-based quadrature of the first-order term of
        # |L0[psi] - V[psi]|^2 expanded around the extremal path:
        # s1 = -2 int dz/L delta sum_j Re{ e^{i b w^2 z} B_j conj(V_j) }
        grid = make_grid(2, 2, 2 * np.pi)
        p = ChannelParams(beta=0.4, gamma=0.07, q=0.01, l=1.2, p=0.9,
                          grid=grid, n_z=4096)
        x, b = fields(p)
        w = grid.omegas()
        zs = np.linspace(0.0, p.l, 2049)
        vals = []
        for z in zs:
            acc = 0.0
            for j in range(2):
                u = lambda k: np.exp(1j * p.beta * w[k]**2 * z) * (
                    (z / p.l) * b.values[k] + x.values[k])
                vj = 0j
                for j1 in range(2):
                    for j2 in range(2):
                        j3 = j1 + j2 - j
                        if 0 <= j3 < 2:
                            vj += u(j1) * u(j2) * np.conj(u(j3))
                vj *= 1j * p.gamma * grid.delta**2
                acc += grid.delta * np.real(
                    np.exp(1j * p.beta * w[j]**2 * z) * b.values[j]
                    * np.conj(vj))
            vals.append(acc)
        oracle = -2.0 / p.l * np.trapezoid(vals, zs)
        assert s1(x, b, p) == pytest.approx(oracle, rel=1e-8)

    def test_s1_linear_in_gamma(self):
        p1 = params_for(3, 3, beta_tilde=0.6, gamma=0.1)
        p2 = params_for(3, 3, beta_tilde=0.6, gamma=0.2)
        x, b = fields(p1)
        assert s1(x, b, p2) == pytest.approx(2.0 * s1(x, b, p1), rel=1e-13)

    def test_s2_trivial_and_scaling(self):
        p0_ = params_for(2, 2, gamma=0.0)
        x, b = fields(p0_)
        assert s2(x, b, p0_) == 0.0
        p1 = params_for(2, 2, beta_tilde=0.9, gamma=0.1, n_z=32)
        p2 = params_for(2, 2, beta_tilde=0.9, gamma=0.2, n_z=32)
        assert s2(x, b, p2) == pytest.approx(4.0 * s2(x, b, p1), rel=1e-10)

    def test_s2_self_convergence(self):
        x = None
        vals = {}
        for n_z in (64, 128, 256):
            p = params_for(2, 2, beta_tilde=0.9, gamma=0.1, n_z=n_z)
            if x is None:
                x, b = fields(p)
            vals[n_z] = s2(x, b, p)
        e64 = abs(vals[64] - vals[256])
        e128 = abs(vals[128] - vals[256])
        assert e64 / e128 > 2.5  # O(dz^2) against the reference


class TestExpansionCoefficients:
    def test_alpha01_defining_identity(self):
        p = params_for(3, 3, beta_tilde=0.8, gamma=0.13, eps=0.04)
        x, b = fields(p)
        lhs = alpha01(x, b, p) * (p.gamma_tilde / p.eps) * p.q
        assert lhs + s1(x, b, p) == pytest.approx(0.0, abs=1e-12 * abs(lhs))

    def test_alpha01_zero_b(self):
        p = params_for(2, 2)
        x, _ = fields(p)
        zero = Spectrum(values=np.zeros(2), grid=p.grid)
        assert alpha01(x, zero, p) == pytest.approx(0.0, abs=1e-15)

    def test_alpha01_gamma_free(self):
        pa = params_for(2, 2, gamma=0.0)
        pb = params_for(2, 2, gamma=0.5)
        x, b = fields(pa)
        assert alpha01(x, b, pa) == pytest.approx(alpha01(x, b, pb), rel=1e-14)

    def test_alpha02(self):
        p = params_for(2, 2, beta_tilde=0.3)
        x, b = fields(p)
        a1 = alpha01(x, b, p)
        assert alpha02(x, b, p) == a1 * a1 / 2.0
        assert abs(a1) > 0

    def test_alpha11_identity(self):
        p = params_for(2, 2, beta_tilde=0.5, gamma=0.2, n_z=64)
        x, b = fields(p)
        lhs = alpha11(x, b, p) * p.gamma_tilde**2
        rhs = -(p.l / p.p) * s2(x, b, p)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_alpha11_finite_at_gamma_zero(self):
        p = params_for(2, 2, beta_tilde=0.5, gamma=0.0, n_z=32)
        x, b = fields(p)
        assert np.isfinite(alpha11(x, b, p))
        assert alpha11(x, b, p) != 0.0


class TestGamma10:
    def test_real_multiple_zero(self):
        p = params_for(3, 3)
        x, _ = fields(p)
        b = Spectrum(values=1.7 * x.values, grid=p.grid)
        assert gamma10(x, b, p) == pytest.approx(0.0, abs=1e-15)

    def test_x_zero(self):
        p = params_for(3, 3)
        _, b = fields(p)
        zero = Spectrum(values=np.zeros(3), grid=p.grid)
        assert gamma10(zero, b, p) == 0.0
        assert gamma10(zero, b, p, method="quadrature") == pytest.approx(
            0.0, abs=1e-12)

    def test_dual_path(self):
        errs = []
        for n_z in (64, 128):
            p = params_for(3, 3, beta_tilde=1.1, n_z=n_z)
            x, b = fields(p)
            errs.append(abs(gamma10(x, b, p)
                            - gamma10(x, b, p, method="quadrature")))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.3)


class TestDensities:
    def test_p0_conditional_at_zero(self):
        p = params_for(2, 2, eps=0.05)
        zero = Spectrum(values=np.zeros(2), grid=p.grid)
        d = p0_conditional(zero, p)
        expect = (p.grid.delta / (np.pi * p.q * p.l)) ** 2
        assert d.density == pytest.approx(expect, rel=1e-12)

    def test_single_mode_normalization(self):
        # 2-D quadrature of the one-mode factor over the complex plane
        grid = make_grid(1, 1, 2 * np.pi)
        p = ChannelParams(beta=0.0, gamma=0.0, q=0.02, l=1.0, p=1.0, grid=grid)
        var = p.q * p.l / grid.delta
        r = np.linspace(-6 * np.sqrt(var / 2), 6 * np.sqrt(var / 2), 801)
        cell = (r[1] - r[0]) ** 2
        gx, gy = np.meshgrid(r, r)
        dens = np.empty_like(gx)
        for i in range(0, 801, 1):
            bvals = gx[i] + 1j * gy[i]
            dens[i] = [(p0_conditional(
                Spectrum(values=np.array([bv]), grid=grid), p).density)
                for bv in bvals]
        assert float(dens.sum() * cell) == pytest.approx(1.0, abs=1e-6)

    def test_p0_out_bands(self):
        p = params_for(2, 2, eps=0.05)
        y = sample_b(p, 3)
        d = p0_out(y, p)
        # no outer modes: pure inner form
        ql = p.q * p.l
        expect = 2 * np.log(p.grid.delta / (np.pi * (p.p + ql))) \
            - p.grid.delta * np.sum(np.abs(y.values) ** 2) / (p.p + ql)
        assert d.log_density == pytest.approx(expect, rel=1e-12)

    def test_p0_out_zero(self):
        p = params_for(2, 4, eps=0.05)
        zero = Spectrum(values=np.zeros(4), grid=p.grid)
        ql = p.q * p.l
        expect = 2 * np.log(p.grid.delta / (np.pi * ql)) \
            + 2 * np.log(p.grid.delta / (np.pi * (p.p + ql)))
        assert p0_out(zero, p).log_density == pytest.approx(expect, rel=1e-12)

    def test_p0_out_second_moment(self, rng):
        # single inner mode: E|Y|^2 under the density is (P + QL)/delta
        grid = make_grid(1, 1, 2 * np.pi)
        p = ChannelParams(beta=0.0, gamma=0.0, q=0.02, l=1.0, p=1.0, grid=grid)
        var = (p.p + p.q * p.l) / grid.delta
        n = 200_000
        y = np.sqrt(var / 2) * (rng.normal(size=n) + 1j * rng.normal(size=n))
        m2 = np.mean(np.abs(y) ** 2)
        se = np.std(np.abs(y) ** 2, ddof=1) / np.sqrt(n)
        assert abs(m2 - var) <= 3 * se


class TestBeta1:
    def test_equal_bands_zero(self, rng):
        p = params_for(2, 2, beta_tilde=0.4, gamma=0.3)
        for _ in range(100):
            y = Spectrum(values=rng.normal(size=2) + 1j * rng.normal(size=2),
                         grid=p.grid)
            assert beta1(y, p) == 0.0

    def test_gamma_zero(self, rng):
        p = params_for(2, 4, gamma=0.0)
        y = Spectrum(values=rng.normal(size=4) + 1j * rng.normal(size=4),
                     grid=p.grid)
        assert beta1(y, p) == 0.0

    def test_brute_force_oracle(self, rng):
        # quadruple loops plus dense z quadrature, fully independent code
        p = params_for(2, 4, beta_tilde=0.0, gamma=0.11, eps=0.03)
        yv = rng.normal(size=4) + 1j * rng.normal(size=4)
        y = Spectrum(values=yv, grid=p.grid)
        got = beta1(y, p)
        ql = p.q * p.l
        inner = p.grid.inner_mask()
        s = np.linspace(0.0, 1.0, 20001)
        acc = 0j
        for j in range(4):
            for j1 in range(4):
                for j2 in range(4):
                    j3 = j1 + j2 - j
                    if not 0 <= j3 < 4:
                        continue
                    br = (float(not inner[j] and inner[j1])
                          - float(not inner[j1] and inner[j]))
                    if br == 0.0:
                        continue
                    def wgt(k):
                        if inner[k]:
                            return 1.0 + (ql / (p.p + ql)) * (s - 1.0)
                        return s
                    zint = np.trapezoid(wgt(j2) * wgt(j3), s)  # mu = 0
                    acc += br * zint * yv[j] * yv[j3] * np.conj(yv[j1]) \
                        * np.conj(yv[j2])
        pref = 2.0 * p.gamma * p.p * p.l / (ql * (p.p + ql)) * p.grid.delta**3
        oracle = (pref * acc / 2j).real
        assert got == pytest.approx(oracle, rel=1e-8)

    def test_dispersive_brute_force(self, rng):
        p = params_for(1, 3, beta_tilde=1.7, gamma=0.2, eps=0.05)
        yv = rng.normal(size=3) + 1j * rng.normal(size=3)
        y = Spectrum(values=yv, grid=p.grid)
        got = beta1(y, p)
        ql = p.q * p.l
        inner = p.grid.inner_mask()
        w = p.grid.omegas()
        s = np.linspace(0.0, 1.0, 40001)
        acc = 0j
        for j in range(3):
            for j1 in range(3):
                for j2 in range(3):
                    j3 = j1 + j2 - j
                    if not 0 <= j3 < 3:
                        continue
                    br = (float(not inner[j] and inner[j1])
                          - float(not inner[j1] and inner[j]))
                    if br == 0.0:
                        continue
                    mu = 1j * p.beta * p.l * (w[j]**2 + w[j3]**2 - w[j1]**2
                                              - w[j2]**2)
                    def wgt(k):
                        if inner[k]:
                            return 1.0 + (ql / (p.p + ql)) * (s - 1.0)
                        return s
                    integrand = np.exp(mu * (s - 1.0)) * wgt(j2) * wgt(j3)
                    acc += br * np.trapezoid(integrand, s) * yv[j] * yv[j3] \
                        * np.conj(yv[j1]) * np.conj(yv[j2])
        pref = 2.0 * p.gamma * p.p * p.l / (ql * (p.p + ql)) * p.grid.delta**3
        oracle = (pref * acc / 2j).real
        assert got == pytest.approx(oracle, rel=1e-7)


class TestPdfExpansion:
    def test_gamma_zero_collapse(self):
        p = params_for(2, 2, gamma=0.0)
        x, b = fields(p)
        w = p.grid.omegas()
        y = Spectrum(values=np.exp(1j * p.beta * w**2 * p.l)
                     * (x.values + b.values), grid=p.grid)
        terms = pdf_expansion(x, y, p)
        assert terms.alpha1 == 0.0 and terms.alpha2_partial == 0.0
        assert terms.density == terms.p0

    def test_homogeneity_bookkeeping(self):
        # doubling gamma at fixed eps doubles alpha1 and quadruples alpha2
        p1 = params_for(2, 2, beta_tilde=0.5, gamma=0.04, n_z=32)
        p2 = params_for(2, 2, beta_tilde=0.5, gamma=0.08, n_z=32)
        x, b = fields(p1)
        w = p1.grid.omegas()
        y = Spectrum(values=np.exp(1j * p1.beta * w**2 * p1.l)
                     * (x.values + b.values), grid=p1.grid)
        t1, t2 = pdf_expansion(x, y, p1), pdf_expansion(x, y, p2)
        assert t2.alpha1 == pytest.approx(2.0 * t1.alpha1, rel=1e-10)
        assert t2.alpha2_partial == pytest.approx(4.0 * t1.alpha2_partial,
                                                  rel=1e-10)

    def test_normalization_monte_carlo(self):
        # <alpha1>_B at fixed X is 0 within 3 sigma
        from nlse_mi.montecarlo import alpha1_batch
        p = params_for(2, 2, beta_tilde=0.8, gamma=0.05, eps=0.02)
        x = sample_input(p, 5)
        n = 40_000
        rng = np.random.default_rng(8)
        bb = np.sqrt(p.q * p.l / p.grid.delta / 2) * (
            rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2)))
        xb = np.tile(x.values, (n, 1))
        vals = alpha1_batch(xb, bb, p)
        assert abs(vals.mean()) <= 3.0 * vals.std(ddof=1) / np.sqrt(n)


class TestReality:
    def test_all_real(self):
        p = params_for(3, 3, beta_tilde=1.2, gamma=0.17, n_z=32)
        x, b = fields(p)
        for val in (s0(b, p), s1(x, b, p), s2(x, b, p), alpha01(x, b, p),
                    alpha11(x, b, p), gamma10(x, b, p)):
            assert isinstance(val, float) and np.isfinite(val)
