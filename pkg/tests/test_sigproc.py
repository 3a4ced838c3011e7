import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wamkit import sigproc as sp


class TestRocof:
    def test_constant_is_zero(self):
        out = sp.rocof(np.full(50, 60.0), 0.1)
        assert np.allclose(out, 0.0)

    def test_linear_ramp_exact(self):
        t = 0.1 * np.arange(100)
        out = sp.rocof(60.0 - 0.01 * t, 0.1)
        assert np.allclose(out, -0.01, atol=1e-9)

    def test_median_removes_spike(self):
        # oracle: brute-force median filter then differences, by hand
        f = np.array([60.0] * 4 + [60.5] + [60.0] * 5)
        dt = 0.1
        width = 5
        padded = np.concatenate([[f[0]] * 2, f, [f[-1]] * 2])
        med = np.array([sorted(padded[i:i + width])[2] for i in range(len(f))])
        expect = np.empty_like(med)
        expect[1:-1] = (med[2:] - med[:-2]) / (2 * dt)
        expect[0] = (med[1] - med[0]) / dt
        expect[-1] = (med[-1] - med[-2]) / dt
        assert np.allclose(expect, 0.0)  # spike fully removed by width-5 median

        out = sp.rocof(f, dt, smooth_n=5)
        assert np.allclose(out, expect)
        # without smoothing the spike leaks into rocof
        assert np.abs(sp.rocof(f, dt)).max() > 1.0

    def test_nan_gap_propagates(self):
        f = np.full(20, 60.0)
        f[10] = np.nan
        out = sp.rocof(f, 0.1)
        assert np.isnan(out[9]) and np.isnan(out[11])

    def test_angle_frequency_consistency(self):
        # rocof of f equals (1/2pi) * second difference of the angle series
        # integrated from it (trapezoid rule), within dt^2
        dt = 0.01
        t = dt * np.arange(2000)
        f_dev = 0.05 * np.sin(2 * np.pi * 0.4 * t)
        incr = 0.5 * (f_dev[1:] + f_dev[:-1]) * dt
        angle = 2 * np.pi * np.concatenate([[0.0], np.cumsum(incr)])
        d2 = np.zeros_like(angle)
        d2[1:-1] = (angle[2:] - 2 * angle[1:-1] + angle[:-2]) / dt ** 2
        r = sp.rocof(f_dev, dt)
        mid = slice(2, -2)
        assert np.abs(r[mid] - d2[mid] / (2 * np.pi)).max() <= dt ** 2


class TestRelativeAngleShift:
    def test_identical_sensors_zero(self):
        a = np.tile(np.linspace(0, 50, 100), (4, 1))
        out = sp.relative_angle_shift(a, 0, slice(0, 20))
        assert np.allclose(out, 0.0)

    def test_unwrap_rule(self):
        assert np.allclose(sp.unwrap_deg(np.array([179.0, -179.0])),
                           [179.0, 181.0])

    def test_two_area_sign(self):
        # oracle: angle = integral of 2*pi*df, so the deficit area's RAS goes
        # negative against a surplus-area reference
        dt = 0.1
        t = dt * np.arange(200)
        df_deficit = np.where(t > 5, -0.02, 0.0)
        df_surplus = np.where(t > 5, -0.005, 0.0)
        ang = np.vstack([
            360.0 * np.cumsum(df_surplus) * dt,   # reference, surplus
            360.0 * np.cumsum(df_deficit) * dt,
        ])
        out = sp.relative_angle_shift(ang, 0, slice(0, 40))
        assert out[1, -1] < -1.0
        assert np.allclose(out[:, :40], 0.0, atol=1e-9)

    def test_masked_reference_rejected(self):
        a = np.full((2, 50), np.nan)
        a[1] = 0.0
        with pytest.raises(ValueError):
            sp.relative_angle_shift(a, 0, slice(0, 10))


class TestFftMag:
    def test_impulse_flat(self):
        x = np.zeros(64)
        x[0] = 1.0
        spec = sp.fft_mag(x)
        assert np.allclose(spec.bins, 1.0)

    def test_pure_sine_dominant_bin(self):
        n = 256
        k = 12
        x = np.sin(2 * np.pi * k * np.arange(n) / n)
        spec = sp.fft_mag(x)
        assert spec.bins.argmax() == k

    def test_parseval(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(300)
        spec = sp.fft_mag(x)
        assert sp.parseval_gap(x, spec) < 1e-9

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sp.fft_mag(np.array([]))

    @settings(max_examples=30)
    @given(st.integers(8, 200), st.integers(0, 2 ** 31 - 1))
    def test_parseval_property(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        assert sp.parseval_gap(x, sp.fft_mag(x)) < 1e-9

    def test_bin_count(self):
        spec = sp.fft_mag(np.ones(100))  # padded to 128
        assert spec.bins.size == 128 // 2 + 1


class TestEmd:
    def test_constant_input(self):
        x = np.full(64, 2.5)
        out = sp.emd(x)
        assert out.imfs == []
        assert np.array_equal(out.residue, x)

    def test_reconstruction_exact(self):
        rng = np.random.default_rng(1)
        t = np.linspace(0, 1, 600)
        x = np.sin(2 * np.pi * 9 * t) + 0.4 * np.sin(2 * np.pi * 2 * t) + t
        out = sp.emd(x)
        assert len(out.imfs) >= 2
        err = np.abs(out.reconstruct() - x).max()
        assert err <= 1e-8 * np.abs(x).max()

    def test_single_tone_first_imf_correlation(self):
        # oracle: direct correlation computation
        fs = 1440.0
        t = np.arange(int(2 * fs)) / fs
        x = np.sin(2 * np.pi * 5 * t)
        out = sp.emd(x)
        corr = np.corrcoef(out.imfs[0], x)[0, 1]
        assert corr > 0.99

    def test_two_tone_separation(self):
        # oracle: dominant FFT bin of each IMF
        fs = 500.0
        t = np.arange(1000) / fs
        x = np.sin(2 * np.pi * 50 * t) + 1.5 * np.sin(2 * np.pi * 2 * t)
        out = sp.emd(x)
        spec1 = sp.fft_mag(out.imfs[0], 1 / fs)
        f1 = spec1.bins.argmax() * spec1.df_hz
        assert abs(f1 - 50) < 5
        rest = np.sum(out.imfs[1:], axis=0) + out.residue
        spec2 = sp.fft_mag(rest, 1 / fs)
        f2 = spec2.bins.argmax() * spec2.df_hz
        assert abs(f2 - 2) < 1

    def test_imf_zero_crossing_extrema_counts(self):
        rng = np.random.default_rng(7)
        t = np.linspace(0, 1, 800)
        x = np.sin(2 * np.pi * 11 * t) + 0.5 * np.sin(2 * np.pi * 3 * t + 1.0)
        out = sp.emd(x)
        for imf in out.imfs[:2]:
            from wamkit.sigproc import _count_zero_crossings, _local_extrema
            nz = _count_zero_crossings(imf)
            ne = len(_local_extrema(imf)[0]) + len(_local_extrema(imf)[1])
            assert abs(nz - ne) <= 1

    def test_short_input_rejected(self):
        with pytest.raises(ValueError):
            sp.emd(np.ones(4))


class TestEemd:
    def test_degenerate_matches_emd(self):
        t = np.linspace(0, 1, 400)
        x = np.sin(2 * np.pi * 7 * t) + t
        a = sp.eemd(x, n_ensemble=1, noise_eps=0.0)
        b = sp.emd(x)
        assert len(a.imfs) == len(b.imfs)
        for ia, ib in zip(a.imfs, b.imfs):
            assert np.array_equal(ia, ib)

    def test_reconstruction_noise_bound(self):
        # ensemble-mean noise statistics: residual RMS <= 3*eps*sigma/sqrt(N)
        t = np.linspace(0, 1, 400)
        x = np.sin(2 * np.pi * 6 * t) + 0.3 * np.sin(2 * np.pi * 1.5 * t)
        eps, n_ens = 0.2, 20
        fails = 0
        for seed in range(20):
            out = sp.eemd(x, n_ensemble=n_ens, noise_eps=eps, seed=seed)
            resid = out.reconstruct() - x
            rms = np.sqrt(np.mean(resid ** 2))
            if rms > 3 * eps * np.std(x) / np.sqrt(n_ens):
                fails += 1
        assert fails == 0

    def test_determinism(self):
        t = np.linspace(0, 1, 300)
        x = np.sin(2 * np.pi * 5 * t) + 0.1 * t
        a = sp.eemd(x, n_ensemble=5, noise_eps=0.2, seed=42)
        b = sp.eemd(x, n_ensemble=5, noise_eps=0.2, seed=42)
        assert len(a.imfs) == len(b.imfs)
        for ia, ib in zip(a.imfs, b.imfs):
            assert np.array_equal(ia, ib)
        assert np.array_equal(a.residue, b.residue)
