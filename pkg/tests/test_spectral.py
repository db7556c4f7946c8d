import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import lfilter

from wienerrom.core import ComplexSeries
from wienerrom.spectral import (acf, ccf, clipped_spectrum, filter_response, power_spectrum,
                                resample_spectrum, spectral_factor)


def ar1(rng, n, rho, complex_=False):
    w = rng.standard_normal(n)
    if complex_:
        w = (w + 1j * rng.standard_normal(n)) / np.sqrt(2)
    return lfilter([1.0], [1.0, -rho], w)


class TestACF:
    def test_constant(self):
        c = acf(np.ones(100), 5)
        assert np.allclose(c, 0)

    def test_white(self, rng):
        n = 1_000_000
        x = rng.standard_normal((n, 2))
        c = acf(x, 3)
        se = 1 / np.sqrt(n)
        assert np.allclose(c[0].real, np.eye(2), atol=3 * np.sqrt(2) * se)
        assert np.all(np.abs(c[1:]) < 4 * se)

    def test_ar1_oracle(self, rng):
        rho, n = 0.9, 400_000
        x = ar1(rng, n, rho)
        c = acf(x, 10)[:, 0, 0].real
        oracle = rho ** np.arange(11) / (1 - rho ** 2)
        assert np.allclose(c, oracle, rtol=0.05)

    def test_definition_on_small_series(self, rng):
        x = rng.standard_normal((12, 2)) + 1j * rng.standard_normal((12, 2))
        c = acf(x, 4)
        xm = x - x.mean(axis=0)
        for k in range(5):
            direct = sum(np.outer(xm[n + k], np.conj(xm[n])) for n in range(12 - k)) / (12 - k)
            assert np.allclose(c[k], direct)

    def test_lag_too_large(self):
        with pytest.raises(ValueError):
            acf(np.zeros(5), 5)


class TestCCF:
    def test_lag0_equals_acf(self, rng):
        x = rng.standard_normal((500, 2))
        assert np.allclose(ccf(x, x, 4)[4], acf(x, 4)[0])

    def test_shift_peak(self, rng):
        u = rng.standard_normal(5000)
        v = np.roll(u, 3)  # v[n] = u[n-3]
        c = ccf(v, u, 6)[:, 0, 0].real
        assert np.argmax(c) - 6 == 3

    def test_independent_null_band(self, rng):
        n = 20000
        c = ccf(rng.standard_normal(n), rng.standard_normal(n), 10)
        assert np.all(np.abs(c) < 4.5 / np.sqrt(n))

    def test_mismatched(self):
        with pytest.raises(ValueError):
            ccf(np.zeros(5), np.zeros(6), 1)
        with pytest.raises(ValueError):
            ccf(ComplexSeries(np.zeros(5), 0.1), ComplexSeries(np.zeros(5), 0.2), 1)


class TestPowerSpectrum:
    def test_ar1_oracle(self, rng):
        rho = 0.6
        x = ar1(rng, 400_000, rho)
        s = power_spectrum(x, seg_len=256)
        oracle = 1 / np.abs(1 - rho * np.exp(1j * s.freqs)) ** 2
        assert np.allclose(s.diagonal()[:, 0], oracle, rtol=0.1)

    def test_integrates_to_variance(self, rng):
        x = rng.standard_normal((100_000, 3)) @ rng.standard_normal((3, 3))
        s = power_spectrum(x, seg_len=128)
        c0 = acf(x, 0)[0]
        assert np.allclose(s.values.mean(axis=0), c0, atol=0.05 * np.abs(c0).max())

    def test_real_input_symmetry(self, rng):
        x = rng.standard_normal((4096, 2))
        s = power_spectrum(x, seg_len=64)
        m = s.m
        flipped = s.values[(-np.arange(m)) % m]
        assert np.allclose(s.values, np.conj(flipped), atol=1e-12)

    def test_convention_for_delay(self, rng):
        # v = u delayed by one step: S_vu(theta) = exp(i theta) S_uu
        u = rng.standard_normal(200_000)
        v = np.concatenate([[0.0], u[:-1]])
        s = power_spectrum(np.column_stack([v, u]), seg_len=64)
        ratio = s.values[:, 0, 1] / s.values[:, 1, 1]
        assert np.allclose(ratio, np.exp(1j * s.freqs), atol=0.05)

    def test_too_short(self):
        with pytest.raises(ValueError):
            power_spectrum(np.zeros(5), seg_len=8)
        with pytest.raises(ValueError):
            power_spectrum(np.zeros(100), seg_len=4)


class TestSpectralFactor:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2 ** 31))
    def test_reconstructs_psd(self, d, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((8, d, d)) + 1j * rng.standard_normal((8, d, d))
        S = a @ np.conj(np.swapaxes(a, 1, 2))
        f = spectral_factor(S)
        assert np.allclose(f @ np.conj(np.swapaxes(f, 1, 2)), S, atol=1e-10 * np.abs(S).max())

    def test_clips_negative(self):
        S = np.array([[[1.0, 0], [0, -1e-3]]])
        assert np.all(np.linalg.eigvalsh(clipped_spectrum(S)) >= -1e-15)

    def test_resample_keeps_psd_and_values(self):
        S = np.stack([np.eye(2) * (1 + np.cos(t)) for t in 2 * np.pi * np.arange(8) / 8])
        from wienerrom.spectral import SpectrumEstimate
        est = SpectrumEstimate(2 * np.pi * np.arange(8) / 8, S)
        r = resample_spectrum(est, 32)
        assert np.allclose(r.values[::4], S)
        assert np.all(np.linalg.eigvalsh(r.values) >= -1e-14)


def test_filter_response_output_spectrum(rng):
    h = np.array([1.0, -0.5, 0.25])
    x = rng.standard_normal(400_000)
    y = lfilter(h, [1.0], x)
    s = power_spectrum(y, seg_len=64)
    H = filter_response(h, s.freqs)
    assert np.allclose(s.diagonal()[:, 0], np.abs(H) ** 2, rtol=0.08)
    # cross spectrum fixes the phase convention: S_yx = H S_xx
    sx = power_spectrum(np.column_stack([y, x]), seg_len=64)
    assert np.allclose(sx.values[:, 0, 1], H * sx.values[:, 1, 1], atol=0.05)
