"""
Single-tone measurements shared by the command line and the tests.

Each function drives one component with a bin-centred sine and returns
its spectrum together with the usual scalar figures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adc import AdcParams, adc_convert_counted, codes_to_volts, default_profile
from .dac import DacParams, dac_convert, generate_profile
from .mixer import MixerParams, demodulate
from .modulator import ModulatorParams, modulate
from .signal import Spectrum, alias_frequency, noise_floor, sine, spectrum
from .spurs import SpurTable

BASEBAND_SAMPLES = 250_000
RF_RATE = 12e9
RF_SAMPLES = 1_500_000


@dataclass(frozen=True, eq=False)
class ToneTest:
    """Spectra and figures of one single-tone run."""

    frequency: float
    dbc: Spectrum
    dbm: Spectrum
    harmonics: dict  # order -> level in dBc
    noise_floor_dbc: float
    sfdr_dbc: float
    saturated: int = 0

    def lines(self, threshold_dbm, origin="simulated") -> SpurTable:
        return SpurTable.from_spectrum(self.dbm, threshold_dbm, origin)


def _tone_test(f, volts: Spectrum, fs, exclude_freqs, saturated=0, guard_bins=0) -> ToneTest:
    k = volts.bin_of(f)
    dbc = Spectrum(volts.bin_width, volts.power, "dBc", float(volts.power[k]), float(volts.power[k]))
    harm = {h: dbc.level(alias_frequency(h * f, fs)) for h in range(2, 6)}
    exclude = {k} | {dbc.bin_of(alias_frequency(h * f, fs)) for h in range(2, 6)}
    exclude |= {dbc.bin_of(x) for x in exclude_freqs}
    floor = noise_floor(dbc, sorted(exclude), guard_bins=guard_bins)
    others = dbc.power_db.copy()
    others[[0, k]] = -np.inf
    return ToneTest(f, dbc, volts, harm, floor, float(-others.max()), saturated)


def dac_tone(f, amplitude=None, params: DacParams = DacParams(), n_samples=BASEBAND_SAMPLES,
             profile_seed=1, noise_seed=2) -> ToneTest:
    """DAC driven by a sine of ``amplitude`` codes (default: full scale)."""
    if amplitude is None:
        amplitude = 2 ** (params.n_bits - 1) - 1
    codes = sine(f, amplitude, params.sample_rate, n_samples, unit="code")
    profile = generate_profile(params, profile_seed)
    v = dac_convert(codes, profile, params, seed=noise_seed)
    return _tone_test(f, spectrum(v, "dBm"), params.sample_rate, ())


def adc_tone(f, amplitude=None, params: AdcParams = AdcParams(), n_samples=BASEBAND_SAMPLES,
             profile_seed=3, noise_seed=4) -> ToneTest:
    """ADC driven by a sine of ``amplitude`` volts peak (default: 0.398 V).

    The noise floor leaves out the harmonics, the interleaving image, the
    offset lines and the crosstalk tones.
    """
    if amplitude is None:
        amplitude = 0.398
    fs = params.sample_rate
    w = sine(f, amplitude, fs, n_samples)
    codes, n_sat = adc_convert_counted(w, default_profile(params, profile_seed), params, seed=noise_seed)
    volts = spectrum(codes_to_volts(codes, params), "dBm")
    spurs = [fs / 2 - f, fs / 2] + [c for c, _ in params.crosstalk]
    return _tone_test(f, volts, fs, spurs, n_sat, guard_bins=1)


def modulator_tone(f, amplitude=0.25, params: ModulatorParams = ModulatorParams(),
                   sample_rate=RF_RATE, n_samples=RF_SAMPLES) -> Spectrum:
    """dBm spectrum of the modulator for ``I = a cos``, ``Q = a sin``."""
    s_i = sine(f, amplitude, sample_rate, n_samples)
    s_q = sine(f, amplitude, sample_rate, n_samples, phase=-np.pi / 2)
    return spectrum(modulate(s_i, s_q, params), "dBm")


def mixer_tone(f_rf, amplitude=0.1, params: MixerParams = MixerParams(),
               sample_rate=RF_RATE, n_samples=RF_SAMPLES) -> Spectrum:
    """dBm spectrum of the mixer output for one RF tone."""
    rf = sine(f_rf, amplitude, sample_rate, n_samples)
    return spectrum(demodulate(rf, params), "dBm")


def lines_below(spec: Spectrum, threshold_dbm, f_max: Optional[float] = None, origin="simulated") -> SpurTable:
    """Spur table of ``spec`` bins at or above ``threshold_dbm`` up to ``f_max``."""
    rows = [(f, p, origin) for f, p in spec.lines(threshold_dbm) if f_max is None or f <= f_max]
    return SpurTable(tuple(rows))
