import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kidsim.errors import FrequencyRangeError
from kidsim.signal import (
    Spectrum,
    Tone,
    ToneComb,
    Waveform,
    alias_frequency,
    bin_index,
    brickwall_lowpass,
    coherent_frequency,
    dbm_to_vpeak,
    decimate,
    noise_floor,
    power_spectrum,
    quantization_floor_dbc,
    sine,
    spectrum,
    synthesize_comb,
    to_dbm,
    upsample,
)

from conftest import BIN, FS, N

bins = st.integers(min_value=1, max_value=N // 2 - 1)


class TestTypes:
    def test_tone_phase_wrapped(self):
        assert Tone(1e6, 1.0, 2 * math.pi + 0.5).phase == pytest.approx(0.5)

    def test_tone_rejects_negative(self):
        with pytest.raises(FrequencyRangeError):
            Tone(-1.0, 1.0)
        with pytest.raises(ValueError):
            Tone(1.0, -1.0)

    def test_comb_requires_increasing(self):
        with pytest.raises(ValueError):
            ToneComb((Tone(2e6, 1), Tone(1e6, 1)))
        with pytest.raises(ValueError):
            ToneComb((Tone(1e6, 1), Tone(1e6, 1)))

    def test_waveform_validation(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros(4), 0.0)
        with pytest.raises(ValueError):
            Waveform(np.zeros(0), 1.0)


class TestSynthesis:
    def test_single_tone_power_in_one_bin(self):
        f = 1000 * BIN
        spec = spectrum(sine(f, 1.0, FS, N), "dBFS", fullscale=1.0)
        k = spec.bin_of(f)
        assert spec.power_db[k] == pytest.approx(0.0, abs=0.01)
        rest = np.delete(spec.power, k)
        assert rest.max() < 1e-25

    def test_empty_comb_is_zero(self):
        w = synthesize_comb(ToneComb(()), FS, 128)
        assert np.all(w.samples == 0)

    def test_matches_direct_sum(self):
        comb = ToneComb.from_frequencies([3 * BIN, 77 * BIN], [1.0, 0.3], [0.2, 1.1], "volt")
        n = 4096
        t = np.arange(n) / FS
        direct = np.cos(2 * np.pi * 3 * BIN * t + 0.2) + 0.3 * np.cos(2 * np.pi * 77 * BIN * t + 1.1)
        w = synthesize_comb(comb, FS, n)
        assert np.allclose(w.samples, direct, atol=1e-9)

    def test_off_grid_falls_back(self):
        comb = ToneComb.from_frequencies([1.234e6], 1.0, amplitude_unit="volt")
        n = 1000
        t = np.arange(n) / FS
        assert np.allclose(synthesize_comb(comb, FS, n).samples, np.cos(2 * np.pi * 1.234e6 * t), atol=1e-9)

    def test_nyquist_rejected(self):
        with pytest.raises(FrequencyRangeError):
            synthesize_comb(ToneComb.from_frequencies([FS / 2], 1.0), FS, 100)

    def test_seed_overrides_phases(self):
        comb = ToneComb.from_frequencies([10 * BIN, 20 * BIN], 1.0)
        a = synthesize_comb(comb, FS, 1000, seed=5)
        b = synthesize_comb(comb, FS, 1000, seed=5)
        c = synthesize_comb(comb, FS, 1000)
        assert np.array_equal(a.samples, b.samples)
        assert not np.allclose(a.samples, c.samples)

    @given(st.lists(bins, min_size=1, max_size=6, unique=True), st.lists(bins, min_size=1, max_size=6, unique=True))
    def test_linearity(self, ka, kb):
        rng = np.random.default_rng(len(ka) * 31 + len(kb))
        n = N
        ka = sorted(set(ka) - set(kb))
        kb = sorted(kb)
        if not ka:
            return
        ta = [Tone(k * BIN, float(rng.uniform(0, 2)), float(rng.uniform(0, 6))) for k in ka]
        tb = [Tone(k * BIN, float(rng.uniform(0, 2)), float(rng.uniform(0, 6))) for k in kb]
        both = ToneComb(tuple(sorted(ta + tb, key=lambda t: t.frequency)))
        s = synthesize_comb(both, FS, n).samples
        parts = synthesize_comb(ToneComb(tuple(ta)), FS, n).samples + synthesize_comb(ToneComb(tuple(tb)), FS, n).samples
        assert np.max(np.abs(s - parts)) <= 1e-12 * max(1.0, np.max(np.abs(s))) * 10

    @given(bins, st.floats(0.1, 10), st.floats(0, 6.28))
    def test_one_bin_and_no_leakage(self, k, a, phase):
        w = sine(k * BIN, a, FS, N, phase)
        p = power_spectrum(w.samples)
        assert 10 * np.log10(p[k] / (a * a / 2)) == pytest.approx(0.0, abs=0.01)
        for j in (k - 1, k + 1):
            assert 10 * np.log10(max(p[j], 1e-300) / p[k]) < -250

    def test_400_tones_10_bits_near_fullscale(self):
        kband = int(1e9 / BIN)
        peaks = []
        for s in range(5):
            rng = np.random.default_rng(s)
            ks = np.sort(rng.choice(np.arange(1, kband), 400, replace=False))
            comb = ToneComb.from_frequencies(ks * BIN, 2.0**9)
            peaks.append(np.abs(synthesize_comb(comb, FS, N, seed=s).samples).max())
        assert 0.8 * 2**15 < np.mean(peaks) < 1.3 * 2**15


class TestSpectrum:
    def test_parseval(self, rng):
        x = rng.normal(size=4096)
        p = power_spectrum(x)
        assert abs(p.sum() - np.mean(x * x)) / np.mean(x * x) < 1e-9

    def test_parseval_odd_length(self, rng):
        x = rng.normal(size=4095)
        assert power_spectrum(x).sum() == pytest.approx(np.mean(x * x), rel=1e-9)

    def test_full_scale_sine_0_dbfs(self):
        spec = spectrum(sine(100 * BIN, 3.0, FS, N), "dBFS", fullscale=3.0)
        assert spec.level(100 * BIN) == pytest.approx(0.0, abs=1e-9)

    def test_references_need_arguments(self):
        w = sine(100 * BIN, 1.0, FS, 1000)
        with pytest.raises(ValueError):
            spectrum(w, "dBFS")
        with pytest.raises(ValueError):
            spectrum(w, "dBc")
        with pytest.raises(ValueError):
            spectrum(w, "dBW")

    def test_dbm_reference(self):
        spec = spectrum(sine(100 * BIN, 1.0, FS, N), "dBm")
        assert spec.level(100 * BIN) == pytest.approx(10.0, abs=1e-9)

    def test_bins_ascending(self):
        spec = spectrum(sine(10 * BIN, 1.0, FS, 1000), "dBm")
        f = spec.frequencies
        assert f[0] == 0 and np.all(np.diff(f) > 0)
        assert spec.bin_width == pytest.approx(FS / 1000)

    def test_csv_format(self):
        spec = spectrum(sine(2 * FS / 8, 1.0, FS, 8), "dBm")
        lines = spec.to_csv().splitlines()
        assert lines[0] == "frequency_hz,power_db,reference"
        assert len(lines) == 6
        assert lines[3].split(",")[1] == "10.000000"

    @pytest.mark.parametrize("bits", [12, 16])
    def test_quantization_floor(self, bits):
        f = coherent_frequency(150e6, FS, N)
        a = 2 ** (bits - 1) - 1
        q = np.rint(sine(f, a, FS, N).samples)
        spec = spectrum(Waveform(q, FS, "code"), "dBc", carrier_bin=bin_index(f, FS, N))
        floor = noise_floor(spec, exclude=[spec.bin_of(f)])
        assert floor == pytest.approx(quantization_floor_dbc(bits, FS, BIN), abs=1.0)

    def test_quantization_floor_formula(self):
        assert quantization_floor_dbc(16, FS, BIN) == pytest.approx(-149.05, abs=0.01)
        direct = -6.02 * 12 - 1.76 - 10 * math.log10(FS / 2 / BIN)
        assert quantization_floor_dbc(12, FS, BIN) == pytest.approx(direct, abs=1e-9)
        assert quantization_floor_dbc(12, FS, BIN) == pytest.approx(-125.05, abs=1.0)

    def test_noise_floor_outlier_cut(self, rng):
        x = rng.normal(size=8192)
        x += 100 * np.cos(2 * np.pi * 300 * np.arange(8192) / 8192)
        spec = spectrum(Waveform(x, 1.0), "dBFS", fullscale=1.0)
        plain = noise_floor(spec)
        cut = noise_floor(spec, outlier_factor=20)
        assert cut < plain - 10


class TestUnits:
    def test_one_volt_is_10_dbm(self):
        assert to_dbm(1.0) == pytest.approx(10.0, abs=1e-12)

    def test_dc(self):
        assert to_dbm(0.4, dc=True) == pytest.approx(10 * math.log10(0.4**2 / 50 / 1e-3), abs=1e-12)
        assert to_dbm(400e-6, dc=True) == pytest.approx(-54.95, abs=0.01)

    def test_zero_is_minus_inf(self):
        assert to_dbm(0.0) == -math.inf

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            to_dbm(-1.0)

    @given(st.floats(1e-9, 1e3))
    def test_inverse(self, v):
        assert dbm_to_vpeak(to_dbm(v)) == pytest.approx(v, rel=1e-12)


class TestFilters:
    def test_below_cutoff_unchanged(self):
        w = sine(1000 * BIN, 1.0, FS, N)
        y = brickwall_lowpass(w, 100e6)
        assert np.max(np.abs(y.samples - w.samples)) < 1e-9

    def test_above_cutoff_removed(self):
        w = sine(100_000 * BIN, 1.0, FS, N)
        y = brickwall_lowpass(w, 100e6)
        assert 10 * np.log10(max(np.mean(y.samples**2), 1e-300) / 0.5) < -200

    def test_two_tone(self):
        lo = sine(1000 * BIN, 1.0, FS, N)
        hi = sine(100_000 * BIN, 1.0, FS, N)
        y = brickwall_lowpass(lo + hi, 100e6)
        assert np.max(np.abs(y.samples - lo.samples)) < 1e-9

    def test_cutoff_range(self):
        w = sine(10 * BIN, 1.0, FS, 1000)
        for c in (0.0, FS / 2, -1.0):
            with pytest.raises(FrequencyRangeError):
                brickwall_lowpass(w, c)

    @given(st.floats(1e6, 0.99e9))
    def test_idempotent(self, cutoff):
        rng = np.random.default_rng(int(cutoff) % 1000)
        w = Waveform(rng.normal(size=2000), FS)
        once = brickwall_lowpass(w, cutoff)
        twice = brickwall_lowpass(once, cutoff)
        assert np.max(np.abs(twice.samples - once.samples)) <= 1e-12 * max(1.0, np.max(np.abs(once.samples)))

    @given(st.lists(st.integers(1, 9_999), min_size=1, max_size=5, unique=True), st.sampled_from([2, 3, 6]))
    def test_up_then_down_is_identity(self, ks, factor):
        n = 20_000
        comb = ToneComb.from_frequencies(np.sort(ks) * FS / n, 1.0, amplitude_unit="volt")
        w = synthesize_comb(comb, FS, n)
        back = decimate(upsample(w, factor), factor)
        assert back.sample_rate == FS
        assert np.max(np.abs(back.samples - w.samples)) < 1e-9

    def test_upsample_keeps_tone(self):
        w = sine(1000 * BIN, 1.0, FS, N)
        up = upsample(w, 6)
        t = np.arange(6 * N) / (6 * FS)
        assert np.max(np.abs(up.samples - np.cos(2 * np.pi * 1000 * BIN * t))) < 1e-9

    def test_decimate_length_check(self):
        with pytest.raises(ValueError):
            decimate(Waveform(np.zeros(7), FS), 2)


class TestGrid:
    def test_bin_index_strict(self):
        assert bin_index(8e3 * 10, FS, N) == 10
        with pytest.raises(FrequencyRangeError):
            bin_index(8e3 * 10.5, FS, N)

    def test_coherent_frequency_odd(self):
        f = coherent_frequency(150e6, FS, N)
        k = bin_index(f, FS, N)
        assert k % 2 == 1 and math.gcd(k, N) == 1
        assert abs(f - 150e6) < 5 * BIN

    @given(st.floats(0, 1e10))
    def test_alias_in_first_zone(self, f):
        a = alias_frequency(f, FS)
        assert 0 <= a <= FS / 2 + 1e-6
