"""
Two-way time-interleaved 12-bit ADC.

Even samples come from core 1, odd samples from core 2.  Core 2 samples
late by ``timing_skew``; each core has its own gain and offset.  A global
offset, board crosstalk tones and white noise are added before a quantizer
whose thresholds carry the INL profile::

    T[c] = (c - 1/2) * V_s + INL[c]

For a tone ``Re(P exp(jwt))`` the interleaved record holds the tone scaled
by ``(g1 + g2 exp(-jw tau)) / 2`` and an image at ``fs/2 - f`` scaled by
``(g1 - g2 exp(-jw tau)) / 2``; the offsets give a DC line and a line at
``fs/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dac import chebyshev_bow, generate_profile, noise_sigma, NonlinearityProfile
from .lines import ENVIRONMENT, LineSet
from .signal import Spectrum, Waveform, dbm_to_vpeak, phase_ramp, spectrum, to_dbm
from .spurs import SpurTable


def _crosstalk_defaults():
    levels = ((250e6, -72.0), (500e6, -68.0), (750e6, -74.0))
    return tuple((f, dbm_to_vpeak(p)) for f, p in levels)


# HD2 of 100 uV (-70 dBm) for a full-scale tone: 0.512 LSB of 195.3 uV.
ADC_SMOOTH_INL = chebyshev_bow({2: 0.512})
DEFAULT_CROSSTALK = _crosstalk_defaults()


@dataclass(frozen=True)
class AdcParams:
    n_bits: int = 12
    fullscale_vpp: float = 0.8
    sample_rate: float = 2e9
    offset_core1: float = 30e-6
    offset_core2: float = -30e-6
    gain_core1: float = 1.0
    gain_core2: float = 0.9995
    timing_skew: float = 0.5e-12
    global_offset: float = 400e-6
    dnl_bound: float = 0.4
    inl_bound: float = 2.5
    smooth_inl_coeffs: tuple = ADC_SMOOTH_INL
    noise_density: Optional[float] = -144.0  # dBc/Hz re full-scale sine, None = off
    crosstalk: tuple = DEFAULT_CROSSTALK  # ((frequency, amplitude), ...)

    def __post_init__(self):
        object.__setattr__(self, "smooth_inl_coeffs", tuple(float(c) for c in self.smooth_inl_coeffs))
        object.__setattr__(self, "crosstalk", tuple((float(f), float(a)) for f, a in self.crosstalk))
        if int(self.n_bits) != self.n_bits or self.n_bits < 2:
            raise ValueError("n_bits must be an integer >= 2")
        if not self.fullscale_vpp > 0:
            raise ValueError("fullscale_vpp must be > 0")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        for name in ("offset_core1", "offset_core2", "global_offset"):
            if abs(getattr(self, name)) >= self.fullscale_vpp:
                raise ValueError(f"{name} must be smaller than full scale")
        if not (self.gain_core1 > 0 and self.gain_core2 > 0):
            raise ValueError("core gains must be > 0")
        if self.dnl_bound < 0 or self.inl_bound < 0:
            raise ValueError("dnl_bound and inl_bound must be >= 0")
        for f, a in self.crosstalk:
            if f < 0 or a < 0:
                raise ValueError("crosstalk entries need frequency >= 0 and amplitude >= 0")

    @classmethod
    def ideal(cls, **overrides):
        """No mismatch, offsets, crosstalk, noise or INL."""
        base = dict(
            offset_core1=0.0, offset_core2=0.0, gain_core1=1.0, gain_core2=1.0, timing_skew=0.0,
            global_offset=0.0, dnl_bound=0.0, inl_bound=0.0, smooth_inl_coeffs=(),
            noise_density=None, crosstalk=(),
        )
        base.update(overrides)
        return cls(**base)

    @property
    def v_step(self) -> float:
        return self.fullscale_vpp / 2**self.n_bits

    @property
    def code_min(self) -> int:
        return -(2 ** (self.n_bits - 1))

    @property
    def code_max(self) -> int:
        return 2 ** (self.n_bits - 1) - 1

    @property
    def fullscale_peak(self) -> float:
        return self.fullscale_vpp / 2.0

    def swapped(self) -> "AdcParams":
        """Same converter with the two cores exchanged."""
        from dataclasses import replace

        return replace(
            self, offset_core1=self.offset_core2, offset_core2=self.offset_core1,
            gain_core1=self.gain_core2, gain_core2=self.gain_core1, timing_skew=-self.timing_skew,
        )


def fractional_delay(x: np.ndarray, delay_samples) -> np.ndarray:
    """Band-limited delay of a periodic record by a fraction of a sample.

    The record is treated as one period of a band-limited signal, so the
    delay is a phase ramp in the frequency domain (a periodic sinc kernel).
    """
    if delay_samples == 0:
        return x.copy()
    n = x.size
    spec = np.fft.rfft(x)
    k = np.arange(spec.size)
    ramp = np.exp(-2j * np.pi * k * delay_samples / n)
    if n % 2 == 0:
        ramp[-1] = np.cos(np.pi * delay_samples)
    return np.fft.irfft(spec * ramp, n)


def thresholds(profile: NonlinearityProfile, params: AdcParams) -> np.ndarray:
    """Decision levels between consecutive codes (``2**n - 1`` values)."""
    codes = np.arange(params.code_min + 1, params.code_max + 1)
    return (codes - 0.5) * params.v_step + profile.inl[1:]


def analog_front_end(w: Waveform, params: AdcParams, seed=None) -> np.ndarray:
    """Volts presented to the quantizer, pipeline steps 1 to 4."""
    x = w.samples
    n = x.size
    y = np.empty(n)
    y[0::2] = params.gain_core1 * x[0::2] + params.offset_core1
    if params.timing_skew:
        late = fractional_delay(x, params.timing_skew * w.sample_rate)
    else:
        late = x
    y[1::2] = params.gain_core2 * late[1::2] + params.offset_core2
    y += params.global_offset
    for f, a in params.crosstalk:
        if a:
            y += a * np.cos(phase_ramp(f, n, w.sample_rate))
    sigma = noise_sigma(params.noise_density, params.fullscale_peak, w.sample_rate)
    if sigma > 0:
        y += np.random.default_rng(seed).normal(0.0, sigma, n)
    return y


def quantize(v: np.ndarray, profile: NonlinearityProfile, params: AdcParams):
    """Codes for voltages ``v`` and the number of samples beyond the rails."""
    t = thresholds(profile, params)
    codes = params.code_min + np.searchsorted(t, v, side="right")
    lo = (params.code_min - 0.5) * params.v_step
    hi = (params.code_max + 0.5) * params.v_step
    n_sat = int(np.count_nonzero((v < lo) | (v >= hi)))
    return codes.astype(float), n_sat


def adc_convert_counted(w: Waveform, profile: Optional[NonlinearityProfile], params: AdcParams, seed=None):
    """Like :func:`adc_convert`, also returning the saturated-sample count."""
    if not math.isclose(w.sample_rate, params.sample_rate, rel_tol=1e-12):
        raise ValueError(f"waveform at {w.sample_rate:g} S/s, ADC at {params.sample_rate:g} S/s")
    if profile is None:
        profile = NonlinearityProfile.ideal(params.n_bits, params.v_step)
    v = analog_front_end(w, params, seed)
    codes, n_sat = quantize(v, profile, params)
    return Waveform(codes, w.sample_rate, "code"), n_sat


def adc_convert(w: Waveform, profile: Optional[NonlinearityProfile], params: AdcParams, seed=None) -> Waveform:
    """Volts to codes through the interleaved front end and the INL quantizer.

    Out-of-range inputs saturate at the rail codes.  ``profile=None`` means
    an ideal quantizer.
    """
    return adc_convert_counted(w, profile, params, seed)[0]


def codes_to_volts(w: Waveform, params: AdcParams) -> Waveform:
    return Waveform(w.samples * params.v_step, w.sample_rate, "volt")


def image_factors(f, params: AdcParams):
    """Complex gains of the tone and of its ``fs/2 - f`` image (before folding)."""
    late = params.gain_core2 * np.exp(-2j * np.pi * np.asarray(f) * params.timing_skew)
    return (params.gain_core1 + late) / 2.0, (params.gain_core1 - late) / 2.0


def offset_nyquist_amplitude(params: AdcParams) -> float:
    """Amplitude of the sampled alternating offset (its ``fs/2`` bin is ``amp**2``)."""
    return abs(params.offset_core1 - params.offset_core2) / 2.0


def offset_square_wave_dbm(params: AdcParams) -> float:
    """Fundamental of a continuous square wave of the offset mismatch, dBm.

    ``(4/pi) * |o1 - o2| / 2`` peak.  The sampled record carries the whole
    square wave in its ``fs/2`` bin instead, which is 0.91 dB higher.
    """
    return to_dbm(4.0 / math.pi * offset_nyquist_amplitude(params))


def dc_level(params: AdcParams) -> float:
    return params.global_offset + (params.offset_core1 + params.offset_core2) / 2.0


def mismatch_relative_levels(f_tone, params: AdcParams):
    """Small-mismatch closed forms of the image relative to the tone.

    ``gain``: ``|g1 - g2| / (g1 + g2)``; ``skew``: ``pi f tau``.
    """
    g1, g2 = params.gain_core1, params.gain_core2
    return {
        "gain": abs(g1 - g2) / (g1 + g2),
        "skew": math.pi * f_tone * abs(params.timing_skew),
    }


def interleave_spur_prediction(f_tone, params: AdcParams, a_tone=None) -> SpurTable:
    """Analytic spur list of the interleaved front end, powers in dBm.

    ``a_tone`` is the tone peak in volts (default: full scale).  Lines:
    the ``fs/2 - f`` image (gain and skew mismatch combined exactly), the
    ``fs/2`` offset-mismatch line, the DC line and the crosstalk tones.
    Levels at DC and ``fs/2`` are the mean square of the sampled line.
    """
    nyq = params.sample_rate / 2
    if not 0 < f_tone < nyq:
        raise ValueError(f"f_tone must lie in (0, {nyq:g})")
    a = params.fullscale_peak if a_tone is None else a_tone
    rows = []
    _, img = image_factors(f_tone, params)
    if abs(img) > 0:
        rows.append((nyq - f_tone, to_dbm(a * abs(img)), "interleaving image"))
    off = offset_nyquist_amplitude(params)
    if off > 0:
        rows.append((nyq, to_dbm(off, dc=True), "offset mismatch"))
    dc = dc_level(params)
    if dc:
        rows.append((0.0, to_dbm(abs(dc), dc=True), "dc offset"))
    for f, amp in params.crosstalk:
        if amp > 0:
            rows.append((f, to_dbm(amp, dc=(f == 0 or f == nyq)), "crosstalk"))
    return SpurTable(tuple(rows)).sorted()


def crosstalk_floor(params: AdcParams = AdcParams(), n_samples=250_000, profile=None, seed=0) -> Spectrum:
    """Spectrum (dBm) of the converter with no input signal."""
    zero = Waveform(np.zeros(n_samples), params.sample_rate, "volt")
    codes = adc_convert(zero, profile, params, seed)
    return spectrum(codes_to_volts(codes, params), "dBm")


def default_profile(params: AdcParams, seed=0) -> NonlinearityProfile:
    return generate_profile(params, seed)


def adc_lines(lines: LineSet, params: AdcParams) -> LineSet:
    """Interleaving, offset and crosstalk lines for analog input ``lines``.

    Returns the tones with their core-averaged gain, their images and the
    input-independent lines, folded into [0, fs/2].  Quantizer INL is not
    included.
    """
    fs = params.sample_rate
    main_g, img_g = image_factors(lines.freq, params)
    main = LineSet(lines.freq, lines.phasor * main_g, lines.prov, lines.label)
    img = LineSet(lines.freq + fs / 2, lines.phasor * img_g, lines.prov, lines.label).relabeled("interleaving image")
    extra_f, extra_p, extra_l = [], [], []
    off = (params.offset_core1 - params.offset_core2) / 2.0
    if off:
        extra_f.append(fs / 2)
        extra_p.append(off)
        extra_l.append("offset mismatch")
    dc = dc_level(params)
    if dc:
        extra_f.append(0.0)
        extra_p.append(dc)
        extra_l.append("dc offset")
    for f, a in params.crosstalk:
        if a:
            extra_f.append(f)
            extra_p.append(a)
            extra_l.append("crosstalk")
    extra = LineSet.from_lists(extra_f, extra_p, [(ENVIRONMENT,)] * len(extra_f), extra_l)
    return (main + img).fold(fs) + extra
