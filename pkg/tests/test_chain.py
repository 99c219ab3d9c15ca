import cmath
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial

from kidsim.adc import AdcParams
from kidsim.chain import (
    IQ,
    ChainConfig,
    chain_gain,
    chain_lines,
    corrupted_channels,
    extract_iq,
    extract_iq_many,
    run_chain,
)
from kidsim.dac import DacParams, random_comb_bins
from kidsim.errors import ClippingError, FrequencyRangeError
from kidsim.mixer import MixerParams
from kidsim.modulator import ModulatorParams
from kidsim.signal import Tone, ToneComb, Waveform, sine, to_dbm

FS = 2e9
N_SMALL = 20_000  # 100 kHz bins
BIN_SMALL = FS / N_SMALL


def small(freqs, amplitude=8000.0, phases=None, **kw):
    comb = ToneComb.from_frequencies(freqs, amplitude, phases)
    return ChainConfig(comb=comb, n_samples=N_SMALL, **kw)


def transparent(freqs, amplitude=8000.0, phases=None):
    return small(
        freqs, amplitude, phases,
        dac=DacParams.ideal(), modulator=ModulatorParams.balanced(),
        mixer=MixerParams.ideal(), adc=AdcParams.ideal(),
    )


class TestConfig:
    def test_lo_must_match(self):
        with pytest.raises(ValueError):
            ChainConfig(modulator=ModulatorParams(lo_frequency=1.1e9))

    def test_tone_out_of_band(self):
        with pytest.raises(FrequencyRangeError):
            small([1.05e9])

    def test_tone_off_grid(self):
        with pytest.raises(FrequencyRangeError):
            small([100.05e6])

    def test_comb_in_codes(self):
        with pytest.raises(ValueError):
            ChainConfig(comb=ToneComb.from_frequencies([100e6], 0.1, amplitude_unit="volt"))


class TestRun:
    @pytest.mark.parametrize("f", [50e6, 123.4e6, 455.5e6, 870e6])
    def test_transparent_amplitude(self, f):
        cfg = transparent([f])
        (iq,) = run_chain(cfg).iq
        expect = 8000.0 * abs(chain_gain(cfg, f))
        assert 20 * math.log10(iq.amplitude / expect) == pytest.approx(0.0, abs=0.1)

    def test_transparent_phase_constant(self):
        phases = [0.0, 0.7, 2.1, -2.5]
        offsets = []
        for ph in phases:
            (iq,) = run_chain(transparent([300e6], phases=[ph])).iq
            offsets.append(cmath.phase(cmath.rect(1, iq.phase - ph)))
        np.testing.assert_allclose(offsets, offsets[0], atol=1e-3)

    def test_iq_parallel_to_comb(self):
        res = run_chain(small([100e6, 200e6, 300.1e6]))
        assert len(res.iq) == 3
        assert list(res.comb.frequencies) == [100e6, 200e6, 300.1e6]

    def test_deterministic(self):
        cfg = small([123.4e6, 456.7e6])
        a, b = run_chain(cfg), run_chain(cfg)
        assert np.array_equal(a.codes.samples, b.codes.samples)

    def test_retained_stages(self):
        res = run_chain(replace(small([100e6]), retain_stages=True))
        assert set(res.stages) == {"dac_i", "dac_q", "rf", "mixer"}
        assert res.stages["rf"].sample_rate == 12e9

    def test_clipping_stage(self):
        with pytest.raises(ClippingError) as info:
            run_chain(small([100e6], amplitude=40000.0))
        assert info.value.stage == "dac-i"

    def test_870mhz_line_set(self):
        cfg = small([870e6])
        res = run_chain(cfg, spur_threshold_dbm=-80.0)
        measured = {r.frequency: r.power_dbm for r in res.spur_report}
        pred = chain_lines(cfg, 1e-9)
        levels = {}
        for f in np.unique(pred.freq):
            total = pred.phasor[pred.freq == f].sum()
            level = abs(total.real) if f == 0 else abs(total)
            levels[f] = to_dbm(level, dc=f == 0)
        strong = {f: p for f, p in levels.items() if p >= -75.0}
        # demodulated tone, the 330/540/660 MHz IMDs, the ADC image and crosstalk
        for f in (870e6, 330e6, 540e6, 660e6, 130e6, 250e6, 500e6, 750e6):
            assert f in strong
        for f, p in strong.items():
            # the line model leaves out the random part of the INL
            assert measured[f] == pytest.approx(p, abs=1.5), f

    def test_spur_report_labels_tone(self):
        res = run_chain(small([870e6]), spur_threshold_dbm=-80.0)
        tones = [r for r in res.spur_report if r.origin == "tone"]
        assert [r.frequency for r in tones] == [870e6]


def random_comb(n_tones, seed, n_samples=250_000, amplitude=512.0):
    rng = np.random.default_rng([seed, n_tones])
    band = int(1e9 / (FS / n_samples))
    bins = np.sort(random_comb_bins(rng, n_tones, band))
    phases = rng.uniform(0, 2 * np.pi, n_tones)
    return ToneComb(tuple(Tone(b * FS / n_samples, amplitude, p) for b, p in zip(bins, phases)), "code")


def clips(n_tones, seed):
    cfg = ChainConfig(comb=random_comb(n_tones, seed))
    try:
        run_chain(cfg)
    except ClippingError as e:
        assert e.stage in ("dac-i", "dac-q")
        return True
    return False


class TestMultiplexClipping:
    """10 bits per tone is 512 codes of amplitude on the 16-bit DAC."""

    def test_400_tones_run(self):
        ok = sum(not clips(400, s) for s in range(10))
        assert ok >= 6, f"400 tones ran without clipping in {ok}/10 seeds"

    def test_450_tones_clip(self):
        bad = sum(clips(450, s) for s in range(10))
        assert bad >= 6, f"450 tones clipped in {bad}/10 seeds"


class TestExtractIq:
    @given(a=st.floats(1.0, 1e4), phi=st.floats(-3.0, 3.0), k=st.integers(1, 499))
    def test_pure_sine(self, a, phi, k):
        f = k * 2e6
        iq = extract_iq(sine(f, a, FS, 1000, phase=phi), f)
        assert iq.amplitude == pytest.approx(a, rel=1e-9)
        assert iq.phase == pytest.approx(phi, abs=1e-9)
        assert iq.i == pytest.approx(a * math.cos(phi), abs=1e-9 * a)

    @given(k=st.integers(1, 499), j=st.integers(1, 499), b=st.floats(0.0, 100.0))
    def test_out_of_bin_spur(self, k, j, b):
        if j == k:
            return
        tone = sine(k * 2e6, 10.0, FS, 1000, phase=0.3)
        spur = sine(j * 2e6, b, FS, 1000, phase=1.1)
        a, c = extract_iq(tone, k * 2e6), extract_iq(tone + spur, k * 2e6)
        assert c.i == pytest.approx(a.i, abs=1e-9 * (10 + b))
        assert c.q == pytest.approx(a.q, abs=1e-9 * (10 + b))

    @given(theta=st.floats(-math.pi, math.pi).filter(lambda t: abs(math.cos(t)) > 0.15))
    def test_in_bin_spur(self, theta):
        a, rel = 100.0, 10 ** (-40 / 20)
        f = 300e6
        x = sine(f, a, FS, 1000) + sine(f, a * rel, FS, 1000, phase=theta)
        got = extract_iq(x, f).amplitude / a - 1
        expect = abs(1 + rel * cmath.exp(1j * theta)) - 1
        assert got == pytest.approx(expect, abs=1e-9)
        assert 1e-3 <= abs(got) <= 1e-2 + 1e-12

    def test_off_grid(self):
        with pytest.raises(FrequencyRangeError):
            extract_iq(sine(300e6, 1.0, FS, 1000), 301e6)

    def test_many_matches_single(self):
        rng = np.random.default_rng(5)
        w = Waveform(rng.normal(size=1000), FS, "code")
        freqs = [2e6, 300e6, 998e6]
        for one, many in zip([extract_iq(w, f) for f in freqs], extract_iq_many(w, freqs)):
            np.testing.assert_allclose(one, many, atol=1e-12)

    def test_iq_type(self):
        assert IQ._fields == ("i", "q", "amplitude", "phase")


class TestCorruption:
    def test_clean_comb_no_crosstalk_flags(self):
        cfg = small([123.4e6, 310.6e6, 612.8e6, 845.2e6])
        rep = corrupted_channels(cfg)
        assert not [r for r in rep.rows if "crosstalk" in r.spur_origin]

    def test_crosstalk_tone(self):
        rep = corrupted_channels(small([100e6, 250e6]))
        assert 1 in rep.flagged
        assert any("crosstalk" in r.spur_origin for r in rep.rows if r.tone_index == 1)

    def test_image_pair(self):
        rep = corrupted_channels(small([300e6, 700e6]))
        assert rep.flagged == [0, 1]
        for i in (0, 1):
            assert any("interleaving image" in r.spur_origin for r in rep.rows if r.tone_index == i)

    def test_empty_comb(self):
        rep = corrupted_channels(ChainConfig(n_samples=N_SMALL))
        assert rep.n_tones == 0 and rep.n_flagged == 0

    def test_csv_header(self):
        text = corrupted_channels(small([300e6, 700e6])).to_csv()
        assert text.splitlines()[0] == "tone_index,tone_hz,spur_hz,spur_origin,spur_power_dbc,iq_error_bound_pct"

    def test_threshold_monotone(self):
        cfg = small([123.4e6, 250e6, 300e6, 700e6])
        loose = set(corrupted_channels(cfg, -100.0).flagged)
        strict = set(corrupted_channels(cfg, -60.0).flagged)
        assert strict <= loose


def _no_walk(p):
    """Same smooth INL, random walk squeezed to nothing."""
    if not p.smooth_inl_coeffs:
        return replace(p, inl_bound=1e-9)
    x = np.linspace(-1, 1, 2**p.n_bits)
    peak = np.max(np.abs(polynomial.polyval(x, p.smooth_inl_coeffs)))
    return replace(p, inl_bound=peak + 1e-9)


# The line model covers the deterministic part of the chain: a fine ADC
# keeps its quantization out of the tone bins and the random INL walk is
# suppressed, while every line source of the defaults stays on.
_ADC = _no_walk(AdcParams(
    n_bits=20, noise_density=None, dnl_bound=0.4 * 256,
    smooth_inl_coeffs=tuple(256 * c for c in AdcParams().smooth_inl_coeffs),
))
_DAC = _no_walk(replace(DacParams(), noise_density=None))

_grid = st.integers(1, N_SMALL // 2 - 1)
_special = st.sampled_from([250e6, 500e6, 750e6, 330e6, 870e6])


@st.composite
def small_combs(draw):
    n = draw(st.integers(1, 8))
    freqs = []
    for _ in range(n):
        kind = draw(st.sampled_from(["grid", "special", "image"]))
        if kind == "special":
            f = draw(_special)
        elif kind == "image" and freqs:
            f = FS / 2 - draw(st.sampled_from(freqs))
        else:
            f = draw(_grid) * BIN_SMALL
        if 0 < f < 1e9 and f not in freqs:
            freqs.append(f)
    freqs.sort()
    phases = [draw(st.floats(0, 2 * np.pi)) for _ in freqs]
    return freqs, phases


def measured_deviation(cfg):
    """|I/Q of tone i in the comb - I/Q of tone i alone| / |tone i alone|.

    The comb-independent lines (empty-comb run) are removed from the
    single-tone reference so it holds only what belongs to tone i.
    """
    full = run_chain(cfg)
    empty = run_chain(cfg.with_comb(ToneComb((), "code")))
    out = []
    for i, tone in enumerate(full.comb):
        alone = run_chain(cfg.with_comb(ToneComb((tone,), "code"))).iq[0]
        e = extract_iq(empty.codes, tone.frequency)
        ref = complex(alone.i - e.i, alone.q - e.q)
        m = full.iq[i]
        out.append(abs(complex(m.i, m.q) - ref) / abs(ref))
    return out


class TestCorruptionProperty:
    @settings(max_examples=8)
    @given(small_combs())
    def test_sound_and_complete(self, comb_spec):
        freqs, phases = comb_spec
        amplitude = 32000.0 / (len(freqs) + 1)
        cfg = ChainConfig(comb=ToneComb.from_frequencies(freqs, amplitude, phases),
                          dac=_DAC, adc=_ADC, n_samples=N_SMALL)
        rep = corrupted_channels(cfg, power_threshold=-80.0)
        dev = measured_deviation(cfg)
        # an unflagged tone carries less than the threshold, margin included
        limit = 10 ** ((rep.power_threshold + rep.model_margin_db) / 20)
        for i, d in enumerate(dev):
            if i in rep.flagged:
                assert d >= rep.lower_bounds[i], (i, freqs[i], d, rep.lower_bounds[i])
            else:
                assert d <= limit, (i, freqs[i], d)
