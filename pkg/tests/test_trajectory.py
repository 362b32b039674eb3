import numpy as np
import pytest

from nlse_mi.domain import ChannelParams, Spectrum, make_grid, sample_b, sample_input
from nlse_mi.trajectory import TrajectoryField, f_omega, green, psi0, psi1

from conftest import params_for


class TestPsi0:
    def test_boundary_rows(self):
        p = params_for(4, 4, beta_tilde=2.0)
        x, b = sample_input(p, 1), sample_b(p, 2)
        field = psi0(x, b, p)
        np.testing.assert_array_equal(field.values[0], x.values)
        w = p.grid.omegas()
        np.testing.assert_allclose(
            field.values[-1],
            np.exp(1j * p.beta * w**2 * p.l) * (x.values + b.values),
            rtol=1e-14,
        )

    def test_beta_zero_top_row_is_y(self):
        p = params_for(4, 4, beta_tilde=0.0)
        x, b = sample_input(p, 1), sample_b(p, 2)
        field = psi0(x, b, p)
        np.testing.assert_allclose(field.values[-1], x.values + b.values,
                                   rtol=1e-14)

    def test_pointwise_value(self):
        # omega = 1 lattice point, beta = L = 1, z = 0.5, X = 1, B = 2i
        grid = make_grid(2, 2, 4.0)
        p = ChannelParams(beta=1.0, gamma=0.0, q=0.01, l=1.0, p=1.0,
                          grid=grid, n_z=2)
        assert grid.omegas()[1] == 1.0
        x = Spectrum(values=np.array([0.0, 1.0 + 0j]), grid=grid)
        b = Spectrum(values=np.array([0.0, 2.0j]), grid=grid)
        field = psi0(x, b, p)
        assert field.values[1, 1] == pytest.approx(np.exp(0.5j) * (1 + 1j),
                                                   rel=1e-15)

    def test_linearity(self):
        p = params_for(3, 3, beta_tilde=1.0)
        x, b = sample_input(p, 1), sample_b(p, 2)
        scaled = psi0(Spectrum(values=2.0 * x.values, grid=p.grid),
                      Spectrum(values=2.0 * b.values, grid=p.grid), p)
        np.testing.assert_allclose(scaled.values, 2.0 * psi0(x, b, p).values,
                                   rtol=1e-14)


class TestGreen:
    def test_boundaries(self):
        for zp in (0.0, 0.3, 1.0):
            assert green(0.0, zp, 1.0) == 0.0
            assert green(1.0, zp, 1.0) == 0.0

    def test_value_and_symmetry(self):
        assert green(0.25, 0.75, 1.0) == pytest.approx(-0.0625, rel=1e-15)
        zs = np.linspace(0.0, 1.0, 11)
        for z in zs:
            for zp in zs:
                assert green(z, zp, 1.0) == pytest.approx(green(zp, z, 1.0),
                                                          abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            green(-0.1, 0.5, 1.0)
        with pytest.raises(ValueError):
            green(0.5, 1.5, 1.0)

    def test_second_difference_is_lattice_delta(self):
        # d^2/dz^2 G(., z') = delta(z - z'): the discrete second difference
        # at interior nodes is 1/h at z = z' and 0 elsewhere
        n, l = 32, 1.0
        h = l / n
        z = np.linspace(0.0, l, n + 1)
        for k in (5, 16, 27):
            zp = z[k]
            g = np.array([green(zi, zp, l) for zi in z])
            d2 = (g[2:] - 2.0 * g[1:-1] + g[:-2]) / h**2
            expect = np.zeros(n - 1)
            expect[k - 1] = 1.0 / h
            np.testing.assert_allclose(d2, expect, atol=1e-9)


class TestFOmega:
    def test_zero_fields(self):
        p = params_for(2, 2)
        zero = Spectrum(values=np.zeros(2), grid=p.grid)
        assert np.all(f_omega(zero, zero, p, 0.5).values == 0)

    def test_gamma_independence(self):
        p1 = params_for(2, 2, gamma=0.1)
        p2 = params_for(2, 2, gamma=0.7)
        x, b = sample_input(p1, 1), sample_b(p1, 2)
        np.testing.assert_array_equal(f_omega(x, b, p1, 0.3).values,
                                      f_omega(x, b, p2, 0.3).values)

    def test_brute_force_m2(self):
        # exhaustive double sum over the 4 index pairs, independent loops
        grid = make_grid(2, 2, 1.0)
        p = ChannelParams(beta=0.0, gamma=0.05, q=0.01, l=1.0, p=1.0,
                          grid=grid, n_z=8)
        x = Spectrum(values=np.array([1.0 + 0j, 0.0]), grid=grid)
        b = Spectrum(values=np.array([0.0, 1.0 + 0j]), grid=grid)
        z = p.l
        expected = np.zeros(2, dtype=complex)
        for j in range(2):
            for j1 in range(2):
                for j2 in range(2):
                    j3 = j1 + j2 - j
                    if not 0 <= j3 < 2:
                        continue
                    u = lambda k: (z / p.l) * b.values[k] + x.values[k]
                    expected[j] += (1.0 / p.l) * u(j2) * 4.0 * b.values[j1] \
                        * np.conj(u(j3))
        expected *= grid.delta**2
        np.testing.assert_allclose(f_omega(x, b, p, z).values, expected,
                                   rtol=1e-14)

    def test_brute_force_dispersive(self, rng):
        grid = make_grid(3, 3, 2.0)
        p = ChannelParams(beta=0.8, gamma=0.05, q=0.01, l=1.3, p=1.0,
                          grid=grid, n_z=8)
        xv = rng.normal(size=3) + 1j * rng.normal(size=3)
        bv = rng.normal(size=3) + 1j * rng.normal(size=3)
        x, b = Spectrum(values=xv, grid=grid), Spectrum(values=bv, grid=grid)
        z = 0.4 * p.l
        w = grid.omegas()
        expected = np.zeros(3, dtype=complex)
        for j in range(3):
            for j1 in range(3):
                for j2 in range(3):
                    j3 = j1 + j2 - j
                    if not 0 <= j3 < 3:
                        continue
                    mu = 1j * p.beta * p.l * (w[j]**2 + w[j3]**2 - w[j1]**2
                                              - w[j2]**2)
                    s = z / p.l
                    u = lambda k: s * bv[k] + xv[k]
                    expected[j] += (np.exp(-mu * s) / p.l) * u(j2) \
                        * ((4.0 - mu * s) * bv[j1] - mu * xv[j1]) \
                        * np.conj(u(j3))
        expected *= grid.delta**2
        np.testing.assert_allclose(f_omega(x, b, p, z).values, expected,
                                   rtol=1e-13)


class TestPsi1:
    def test_gamma_zero(self):
        p = params_for(3, 3, gamma=0.0)
        x, b = sample_input(p, 1), sample_b(p, 2)
        assert np.all(psi1(x, b, p).values == 0)

    def test_boundary_rows_zero(self):
        p = params_for(3, 3, beta_tilde=1.0, gamma=0.2, n_z=16)
        x, b = sample_input(p, 1), sample_b(p, 2)
        field = psi1(x, b, p)
        assert np.all(field.values[0] == 0)
        assert np.all(field.values[-1] == 0)

    def test_self_convergence(self):
        base = dict(m=2, beta_tilde=0.7, gamma=0.1)
        x = sample_input(params_for(2, n_z=64, **{"beta_tilde": 0.7,
                                                  "gamma": 0.1}), 11)
        fields = {}
        for n_z in (64, 128, 256):
            p = params_for(2, beta_tilde=0.7, gamma=0.1, n_z=n_z)
            b = sample_b(p, 12)
            fields[n_z] = psi1(x, b, p).values
        e64 = np.abs(fields[64][::4] - fields[256][::16]).max()
        e128 = np.abs(fields[128][::8] - fields[256][::16]).max()
        assert e64 / e128 == pytest.approx(4.0, rel=0.35)

    def test_cubic_homogeneity(self):
        p = params_for(3, 3, beta_tilde=0.5, gamma=0.1, n_z=32)
        x, b = sample_input(p, 1), sample_b(p, 2)
        ref = psi1(x, b, p).values
        s = 1.7
        scaled = psi1(Spectrum(values=s * x.values, grid=p.grid),
                      Spectrum(values=s * b.values, grid=p.grid), p).values
        np.testing.assert_allclose(scaled, s**3 * ref, rtol=1e-12)


def test_field_shape_validation():
    p = params_for(2, 2, n_z=8)
    with pytest.raises(Exception):
        TrajectoryField(values=np.zeros((3, 2), dtype=complex), params=p)
