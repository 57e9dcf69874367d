import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foloc.errors import ConfigError, EmptyBand
from foloc.spectra import (
    DFT_NOISE_CONSTANT_DEFAULT,
    DFT_NOISE_CONSTANT_PAPER,
    PmuWindow,
    band_mask,
    deviations,
    dft,
    frequency_grid,
    noise_spectral_variance,
    spectral_dataset,
)


def naive_dft(x):
    """O(N^2) direct evaluation of the single-sided transform."""
    N = x.size
    K = (N - 1) // 2
    n = np.arange(N)
    return np.array(
        [np.sum(x * np.exp(-2j * np.pi * w * n / N)) for w in range(K + 1)]
    )


class TestDft:
    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal(41)
        assert np.allclose(dft(x), naive_dft(x), atol=1e-10)

    def test_even_length_rejected(self):
        with pytest.raises(ConfigError):
            dft(np.zeros(10))

    def test_output_length(self, rng):
        x = rng.standard_normal(2 * 17 + 1)
        assert dft(x).size == 18

    def test_dc_bin_is_sum(self, rng):
        x = rng.standard_normal(21)
        assert np.isclose(dft(x)[0], x.sum())

    def test_parseval(self, rng):
        x = rng.standard_normal(101)
        X = dft(x)
        # single-sided Parseval for odd-length real signals
        energy = (np.abs(X[0]) ** 2 + 2.0 * np.sum(np.abs(X[1:]) ** 2)) / x.size
        assert np.isclose(energy, np.sum(x**2), rtol=1e-12)

    @given(st.integers(min_value=1, max_value=30), st.integers(min_value=0, max_value=6))
    @settings(max_examples=30, deadline=None)
    def test_linearity(self, k, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal(2 * k + 1)
        y = r.standard_normal(2 * k + 1)
        a, b = r.standard_normal(2)
        assert np.allclose(dft(a * x + b * y), a * dft(x) + b * dft(y), atol=1e-9)


class TestFrequencyGrid:
    def test_values(self):
        g = frequency_grid(3, 20.0)
        assert np.allclose(g, 2 * np.pi * 20.0 * np.arange(4) / 7)

    def test_dc_first(self):
        assert frequency_grid(10, 5.0)[0] == 0.0

    def test_invalid(self):
        with pytest.raises(ConfigError):
            frequency_grid(0, 20.0)
        with pytest.raises(ConfigError):
            frequency_grid(5, -1.0)

    @given(st.integers(min_value=1, max_value=5000), st.floats(min_value=0.1, max_value=500))
    @settings(max_examples=50, deadline=None)
    def test_monotone_below_nyquist(self, K, fs):
        g = frequency_grid(K, fs)
        assert g.size == K + 1
        assert np.all(np.diff(g) > 0)
        assert g[-1] < 2 * np.pi * fs / 2.0


class TestPmuWindow:
    def test_steady_state_defaults_to_mean(self, rng):
        s = rng.standard_normal((11, 4))
        w = PmuWindow(fs=20.0, samples=s)
        assert np.allclose(w.steady_state, s.mean(axis=0))
        assert w.K == 5

    def test_even_count_rejected(self):
        with pytest.raises(ConfigError):
            PmuWindow(fs=20.0, samples=np.zeros((10, 4)))

    def test_bad_shape_rejected(self):
        with pytest.raises(ConfigError):
            PmuWindow(fs=20.0, samples=np.zeros((11, 3)))

    def test_nonfinite_rejected(self):
        s = np.zeros((11, 4))
        s[3, 2] = np.nan
        with pytest.raises(ConfigError):
            PmuWindow(fs=20.0, samples=s)

    def test_nonpositive_fs_rejected(self):
        with pytest.raises(ConfigError):
            PmuWindow(fs=0.0, samples=np.zeros((11, 4)))

    def test_deviations_remove_mean(self, rng):
        s = rng.standard_normal((21, 4)) + 5.0
        w = PmuWindow(fs=20.0, samples=s)
        for d in deviations(w):
            assert abs(d.mean()) < 1e-12

    def test_explicit_steady_state_respected(self, rng):
        s = rng.standard_normal((21, 4))
        ss = np.array([1.0, 0.1, 0.8, -0.2])
        w = PmuWindow(fs=20.0, samples=s, steady_state=ss)
        dV, dth, dI, dph = deviations(w)
        assert np.allclose(dV, s[:, 0] - 1.0)
        assert np.allclose(dph, s[:, 3] + 0.2)


class TestBandMask:
    def test_contains_center_bin(self):
        g = frequency_grid(100, 20.0)
        m = band_mask(g, g[30], 0.01)
        assert 30 in m.bins

    def test_empty_raises(self):
        g = frequency_grid(100, 20.0)
        half = 0.5 * (g[2] - g[1])
        with pytest.raises(EmptyBand):
            band_mask(g, 0.5 * (g[40] + g[41]), 0.1 * half)

    def test_out_of_range_raises(self):
        g = frequency_grid(10, 20.0)
        with pytest.raises(ConfigError):
            band_mask(g, 2 * g[-1], 0.1)
        with pytest.raises(ConfigError):
            band_mask(g, -1.0, 0.1)

    @given(
        st.integers(min_value=10, max_value=400),
        st.floats(min_value=0.05, max_value=0.95),
        st.floats(min_value=0.01, max_value=2.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_all_bins_inside_and_contiguous(self, K, frac, width):
        g = frequency_grid(K, 20.0)
        wd = frac * g[-1]
        try:
            m = band_mask(g, wd, width)
        except EmptyBand:
            # legitimate when the half-width is below the local bin spacing
            assert 2.0 * width < g[2] - g[1] + 1e-9
            return
        assert np.all(g[m.bins] >= wd - width - 1e-12)
        assert np.all(g[m.bins] <= wd + width + 1e-12)
        assert np.all(np.diff(m.bins) == 1)


class TestNoiseSpectralVariance:
    def test_formula(self):
        assert noise_spectral_variance(2.0, 10, 0.5) == 0.5 * 21 * 2.0

    def test_paper_constant_is_four_times_default(self):
        assert DFT_NOISE_CONSTANT_PAPER == 4.0 * DFT_NOISE_CONSTANT_DEFAULT

    def test_negative_variance_rejected(self):
        with pytest.raises(ConfigError):
            noise_spectral_variance(-1.0, 10)

    def test_monte_carlo_oracle(self, rng):
        # per-component variance of an interior bin of white noise
        K, sigma2, draws = 12, 0.3, 40000
        N = 2 * K + 1
        X = np.fft.fft(rng.normal(0.0, np.sqrt(sigma2), size=(draws, N)), axis=1)
        var_r = X[:, 1:K + 1].real.var(axis=0)
        var_i = X[:, 1:K + 1].imag.var(axis=0)
        pred = noise_spectral_variance(sigma2, K)
        assert np.allclose(var_r, pred, rtol=0.05)
        assert np.allclose(var_i, pred, rtol=0.05)


class TestSpectralDataset:
    def test_structure(self, rng):
        w = PmuWindow(fs=20.0, samples=rng.standard_normal((41, 4)))
        spec = spectral_dataset(w, {"V": 1.0, "theta": 2.0, "I": 3.0, "phi": 4.0})
        assert spec.K == 20
        assert spec.n_bins == 21
        assert spec.grid[0] == 0.0
        assert spec.noise_var["theta"] == 2.0

    def test_default_noise_zero(self, rng):
        w = PmuWindow(fs=20.0, samples=rng.standard_normal((41, 4)))
        spec = spectral_dataset(w)
        assert all(v == 0.0 for v in spec.noise_var.values())

    def test_spectra_match_channel_dfts(self, rng):
        w = PmuWindow(fs=20.0, samples=rng.standard_normal((41, 4)))
        spec = spectral_dataset(w)
        dV, dth, dI, dph = deviations(w)
        assert np.allclose(spec.Vt, dft(dV))
        assert np.allclose(spec.pht, dft(dph))
