import numpy as np
import pytest

from nlse_mi.domain import (
    ChannelParams,
    GridError,
    ParamError,
    Spectrum,
    STREAM_INPUT,
    b_from_xy,
    band_energy,
    complex_normal,
    derived_params,
    make_grid,
    rng_for,
    sample_b,
    sample_input,
)

from conftest import params_for


class TestMakeGrid:
    def test_ratios(self):
        g = make_grid(2, 4, 1.0)
        assert g.w_total == 2.0
        assert g.dw == 0.5
        assert g.delta == pytest.approx(1.0 / (4.0 * np.pi), rel=1e-15)

    def test_equal_bands(self):
        g = make_grid(4, 4, 2.0 * np.pi)
        assert g.w_total == 2.0 * np.pi
        assert g.delta == pytest.approx(0.25, rel=1e-15)

    def test_parity_violation(self):
        with pytest.raises(GridError):
            make_grid(2, 5, 1.0)

    def test_ordering_violation(self):
        with pytest.raises(GridError):
            make_grid(4, 2, 1.0)
        with pytest.raises(GridError):
            make_grid(0, 2, 1.0)
        with pytest.raises(GridError):
            make_grid(2, 2, -1.0)

    def test_duality(self):
        g = make_grid(3, 5, 1.7)
        assert g.dw == pytest.approx(2.0 * np.pi * g.delta, rel=1e-15)

    def test_mode_frequencies_centered(self):
        g = make_grid(2, 4, 1.0)
        w = g.omegas()
        np.testing.assert_allclose(w, [-0.75, -0.25, 0.25, 0.75])
        assert g.inner_slice() == slice(1, 3)


class TestDerivedParams:
    def test_substitution(self):
        p = ChannelParams(beta=1.0, gamma=0.1, q=0.01, l=1.0, p=1.0,
                          grid=make_grid(4, 4, 2.0 * np.pi))
        d = derived_params(p)
        assert d.eps == pytest.approx(0.01, rel=1e-15)
        assert d.gamma_tilde == pytest.approx(0.1, rel=1e-15)
        assert d.beta_tilde == pytest.approx((2.0 * np.pi) ** 2, rel=1e-15)

    def test_zero_gamma(self):
        p = ChannelParams(beta=1.0, gamma=0.0, q=0.01, l=1.0, p=1.0,
                          grid=make_grid(2, 2, 1.0))
        assert derived_params(p).gamma_tilde == 0.0

    def test_hand_evaluation(self):
        # independent evaluation of the three defining products
        p = ChannelParams(beta=0.5, gamma=0.02, q=0.05, l=2.0, p=4.0,
                          grid=make_grid(2, 2, 1.0))
        d = derived_params(p)
        assert d.eps == pytest.approx(0.05 * 2.0 / 4.0, rel=1e-15)
        assert d.gamma_tilde == pytest.approx(0.02 * 4.0 * 2.0 * 1.0 / (2 * np.pi),
                                              rel=1e-15)
        assert d.beta_tilde == pytest.approx(0.5 * 2.0 * 1.0**2, rel=1e-15)

    def test_validation(self):
        with pytest.raises(ParamError):
            ChannelParams(beta=0.0, gamma=0.0, q=-1.0, l=1.0, p=1.0,
                          grid=make_grid(2, 2, 1.0))


class TestSampling:
    def test_outer_band_zero(self):
        p = params_for(2, 6)
        x = sample_input(p, 123)
        assert np.all(x.values[:2] == 0) and np.all(x.values[4:] == 0)
        assert np.all(x.values[2:4] != 0)

    def test_input_correlator(self):
        # P = 1, delta = 0.5: E|X_j|^2 = 2, checked per mode to 3/sqrt(n)
        grid = make_grid(2, 2, 2.0 * np.pi * 2 * 0.5)
        assert grid.delta == pytest.approx(0.5)
        p = ChannelParams(beta=0.0, gamma=0.0, q=0.01, l=1.0, p=1.0, grid=grid)
        n = 100_000
        draws = complex_normal(rng_for(99, STREAM_INPUT), p.p / grid.delta,
                               (n, 2))
        ratio = grid.delta * np.mean(np.abs(draws) ** 2, axis=0) / p.p
        assert np.all(np.abs(ratio - 1.0) <= 3.0 / np.sqrt(n))

    def test_input_correlator_via_op(self):
        p = params_for(2, 2, eps=0.02)
        vals = np.array([sample_input(p, s).values for s in range(1500)])
        ratio = p.grid.delta * np.mean(np.abs(vals) ** 2, axis=0) / p.p
        assert np.all(np.abs(ratio - 1.0) <= 3.0 / np.sqrt(1500))

    def test_b_correlator(self):
        # Q = 0.01, L = 1, delta = 0.25 -> E|B_j|^2 = 0.04... with QL = 0.01
        grid = make_grid(1, 1, 2.0 * np.pi * 0.25)
        p = ChannelParams(beta=0.0, gamma=0.0, q=0.04, l=1.0, p=1.0, grid=grid)
        n = 100_000
        from nlse_mi.domain import STREAM_NOISE_B
        draws = complex_normal(rng_for(7, STREAM_NOISE_B),
                               p.q * p.l / grid.delta, (n, 1))
        mean2 = np.mean(np.abs(draws) ** 2)
        expect = 0.04 / 0.25
        se = np.std(np.abs(draws) ** 2, ddof=1) / np.sqrt(n)
        assert abs(mean2 - expect) <= 3.0 * se
        # zero mean and no unconjugated pair correlation
        assert abs(draws.mean()) <= 3.0 * np.sqrt(expect / n)
        assert abs((draws[:, 0] ** 2).mean()) <= 3.0 * expect / np.sqrt(n)

    def test_seed_determinism(self):
        p = params_for(3, 5)
        assert np.array_equal(sample_input(p, 42).values,
                              sample_input(p, 42).values)
        assert np.array_equal(sample_b(p, 42).values, sample_b(p, 42).values)
        assert not np.array_equal(sample_b(p, 42).values,
                                  sample_b(p, 43).values)


class TestBFromXY:
    def test_beta_zero_y_equals_x(self):
        p = params_for(2, 2, beta_tilde=0.0)
        x = sample_input(p, 1)
        b = b_from_xy(x, x, p)
        assert np.all(b.values == 0)

    def test_x_zero(self):
        p = params_for(2, 2, beta_tilde=0.0)
        y = sample_b(p, 2)
        x = Spectrum(values=np.zeros(2), grid=p.grid)
        assert np.array_equal(b_from_xy(x, y, p).values, y.values)

    def test_phase_factor(self):
        # omega_j = 0.5 lattice point: M'=2, W = 2 -> omegas = (-0.5, 0.5)
        grid = make_grid(2, 2, 2.0)
        p = ChannelParams(beta=1.0, gamma=0.0, q=0.01, l=1.0, p=1.0, grid=grid)
        y = Spectrum(values=np.array([0.0, 1.0 + 0j]), grid=grid)
        x = Spectrum(values=np.zeros(2), grid=grid)
        b = b_from_xy(x, y, p)
        assert b.values[1] == pytest.approx(np.exp(-0.25j), rel=1e-15)

    def test_grid_mismatch(self):
        p = params_for(2, 2)
        x = sample_input(p, 1)
        other = Spectrum(values=np.zeros(4), grid=make_grid(2, 4, 2 * np.pi))
        with pytest.raises(GridError):
            b_from_xy(x, other, p)


class TestBandEnergy:
    def test_zero(self):
        p = params_for(2, 4)
        assert band_energy(Spectrum(values=np.zeros(4), grid=p.grid)) == 0.0

    def test_single_mode(self):
        grid = make_grid(1, 1, 2.0 * np.pi * 0.25)
        s = Spectrum(values=np.array([2.0 + 0j]), grid=grid)
        assert band_energy(s, "inner") == pytest.approx(1.0, rel=1e-15)

    def test_additivity(self, rng):
        p = params_for(2, 6)
        s = Spectrum(values=rng.normal(size=6) + 1j * rng.normal(size=6),
                     grid=p.grid)
        total = band_energy(s, "inner") + band_energy(s, "outer")
        assert total == pytest.approx(band_energy(s, "all"), rel=1e-12)

    def test_bad_band(self):
        p = params_for(2, 2)
        with pytest.raises(ValueError):
            band_energy(sample_input(p, 1), "nope")


def test_spectra_immutable():
    p = params_for(2, 2)
    x = sample_input(p, 1)
    with pytest.raises(ValueError):
        x.values[0] = 1.0
