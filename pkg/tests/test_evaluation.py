import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wienerrom.core import CascadeCoefficients, CascadeModel, ComplexSeries, ModelOrders
from wienerrom.evaluation import (ancr, band_relative_difference, climatological_rmse,
                                  compare_runs, consistency_from_data, efolding_lag,
                                  energy_ccf, energy_spectrum, marginal_density, normalized_acf,
                                  piece_starts, relative_l2_error, rmse, transfer_function)
from wienerrom.fit import fit_linear
from wienerrom.predictors import BasisSpec

finite = st.floats(-10, 10, allow_nan=False)


class TestSkillOracles:
    @settings(max_examples=30, deadline=None)
    @given(arrays(float, (3, 7, 4), elements=finite), arrays(float, (3, 7, 4), elements=finite))
    def test_perfect_forecast(self, re, im):
        v = re + 1j * im
        clim = v.mean(axis=(0, 1))
        assert np.all(rmse(v, v) == 0)
        res = ancr(v, v, clim, tol=1e-9)
        ok = res.skipped == 0
        assert np.allclose(res.curve[ok], 1.0)

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, (3, 7, 4), elements=finite))
    def test_sign_flipped_anomalies(self, re):
        clim = np.array([0.5, -1.0, 2.0, 0.0])
        v = re + clim
        u = clim - re
        res = ancr(v, u, clim, tol=1e-9)
        ok = res.skipped == 0
        assert np.allclose(res.curve[ok], -1.0)

    def test_rmse_by_hand(self):
        v = np.zeros((2, 1, 2), complex)
        u = np.array([[[3.0 + 5j, 4.0]], [[0.0, 0.0]]])
        # piece errors^2: 25 and 0 -> sqrt(12.5); imaginary parts ignored
        assert rmse(v, u)[0] == pytest.approx(np.sqrt(12.5))

    def test_rmse_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((2, 3, 1)), np.zeros((2, 4, 1)))

    def test_climatological_rmse_direct_sum(self, rng):
        v = rng.standard_normal((500, 1, 3)) + 1j * rng.standard_normal((500, 1, 3))
        clim = v.mean(axis=0)[0]
        direct = np.sqrt(np.mean(np.sum((v.real - clim.real) ** 2, axis=2)))
        assert climatological_rmse(v, clim)[0] == pytest.approx(direct)

    def test_zero_anomalies_skipped(self):
        v = np.ones((2, 3, 2))
        res = ancr(v, v, np.ones(2))
        assert np.all(res.skipped == 2) and np.all(np.isnan(res.curve))


class TestStatistics:
    def test_energy_spectrum(self, rng):
        u = rng.standard_normal((20_000, 2)) * np.array([1.0, 3.0])
        es = energy_spectrum(u)
        assert es.mean == pytest.approx([1.0, 9.0], rel=0.05)
        assert np.all(es.stderr > 0) and es.stderr[0] < 0.05

    def test_acf_of_ar1(self, rng):
        n = 100_000
        e = rng.standard_normal(n)
        x = np.zeros(n)
        for t in range(1, n):
            x[t] = 0.8 * x[t - 1] + e[t]
        r = normalized_acf(x + 0j, 5)[:, 0]
        assert r == pytest.approx(0.8 ** np.arange(6), abs=0.02)
        assert efolding_lag(x) == int(np.ceil(-1 / np.log(0.8)))

    def test_energy_ccf_zero_lag_is_correlation(self, rng):
        u = rng.standard_normal((5000, 3)) + 1j * rng.standard_normal((5000, 3))
        c = energy_ccf(u, 4)
        assert c.shape == (9, 3, 3)
        assert np.allclose(np.diag(c[4]), 1.0)

    def test_marginal_density_normalized(self, rng):
        h = marginal_density(rng.standard_normal(10_000), n_bins=30)
        assert np.sum(h.density * np.diff(h.edges)) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            marginal_density(np.zeros(10), n_bins=5)

    def test_piece_starts(self):
        s = piece_starts(1000, horizon=100, init_len=10, gap=200)
        assert list(s) == [0, 200, 400, 600, 800]
        assert np.all(s + 10 + 100 <= 1000)
        assert len(piece_starts(1000, 100, 10, 200, n_pieces=2)) == 2

    def test_relative_l2(self):
        t = np.array([3.0, 4.0])
        assert relative_l2_error(t, t) == 0
        assert relative_l2_error(t, np.zeros(2)) == pytest.approx(1.0)

    def test_band_difference(self, rng):
        s = rng.uniform(1, 2, 64)
        assert band_relative_difference(s, s) == 0
        assert band_relative_difference(s, 1.1 * s) == pytest.approx(0.1)


class TestCompare:
    def test_self_comparison_is_zero(self, rng):
        u = ComplexSeries(rng.standard_normal((4000, 2)) + 0j, 0.1)
        rep = compare_runs(u, u, max_lag=20, seg_len=128)
        assert rep.summary["acf_max_abs_diff"] == 0
        assert rep.summary["ccf_max_abs_diff"] == 0
        assert rep.summary["marginal_l1"] == [0, 0]
        assert rep.summary["spectrum_rel_diff"] == [0, 0]
        assert rep.summary["powerspec_rel_diff"] == 0

    def test_mismatch_raises(self, rng):
        a = ComplexSeries(rng.standard_normal((100, 2)) + 0j, 0.1)
        with pytest.raises(ValueError, match="dimension"):
            compare_runs(a, ComplexSeries(np.zeros((100, 3)), 0.1))
        with pytest.raises(ValueError, match="sampling"):
            compare_runs(a, ComplexSeries(np.zeros((100, 2)), 0.2))
        with pytest.raises(ValueError, match="unknown"):
            compare_runs(a, a, which=("nope",))


class TestSpectralIdentity:
    def test_transfer_function_scalar(self):
        # linear factor z + alpha: w_t = -alpha w_{t-1} + b x_{t-2}, H = b D^2 / (1 + alpha D)
        z, b = 0.6, 0.3 - 0.2j
        m = CascadeModel(ModelOrders(1, 0), CascadeCoefficients((), z), np.array([[b]]),
                         BasisSpec("state", 1), 1, 1)
        th = np.linspace(0, 2 * np.pi, 17)
        H = transfer_function(m, th, np.array([[0]]))
        D = np.exp(1j * th)
        assert np.allclose(H[:, 0, 0], b * D ** 2 / (1 + z * D))

    def test_identity_holds_on_linear_fit(self, rng):
        n = 60_000
        e = rng.standard_normal(n)
        x = np.zeros(n)
        for t in range(2, n):
            x[t] = 0.5 * x[t - 1] + 0.3 * x[t - 2] + e[t]
        basis = BasisSpec("state", 1)
        psi = basis.series(x[:, None] + 0j)
        rep = fit_linear(psi, x[:, None] + 0j, ModelOrders(1, 0))
        res = consistency_from_data(rep.model, x[:, None] + 0j, psi, rep.residuals,
                                    rep.residual_start, seg_len=128)
        assert res.relative < 0.05
