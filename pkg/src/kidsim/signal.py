"""
Signal types, multi-tone synthesis, spectral estimation and unit helpers.

Every component model exchanges :class:`Waveform` objects.  Spectra are
one-sided periodograms with a rectangular window: records are expected to
be coherent (every tone on an exact bin centre), so a sine of peak
amplitude ``A`` shows up as a single bin of power ``A**2 / 2``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FrequencyRangeError

TWO_PI = 2.0 * np.pi

#: Reference impedance for dBm conversions (ohm).
R_REF = 50.0

#: Tolerance (in bins) used to decide that a frequency sits on a bin centre.
BIN_TOL = 1e-6

UNITS = ("code", "volt")
REFERENCES = ("dBFS", "dBc", "dBm")


@dataclass(frozen=True)
class Tone:
    """One probe sinusoid ``amplitude * cos(2*pi*frequency*t + phase)``."""

    frequency: float
    amplitude: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.frequency >= 0:
            raise FrequencyRangeError(f"tone frequency must be >= 0, got {self.frequency}")
        if not self.amplitude >= 0:
            raise ValueError(f"tone amplitude must be >= 0, got {self.amplitude}")
        object.__setattr__(self, "phase", float(self.phase) % TWO_PI)


@dataclass(frozen=True)
class ToneComb:
    """Ordered set of tones sharing an amplitude unit."""

    tones: tuple = ()
    amplitude_unit: str = "code"

    def __post_init__(self):
        tones = tuple(self.tones)
        object.__setattr__(self, "tones", tones)
        if self.amplitude_unit not in UNITS:
            raise ValueError(f"amplitude_unit must be one of {UNITS}")
        freqs = [t.frequency for t in tones]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("tone frequencies must be strictly increasing")

    @classmethod
    def from_frequencies(cls, frequencies, amplitude, phases=None, amplitude_unit="code"):
        frequencies = np.asarray(frequencies, dtype=float)
        amps = np.broadcast_to(np.asarray(amplitude, dtype=float), frequencies.shape)
        if phases is None:
            phases = np.zeros_like(frequencies)
        tones = tuple(
            Tone(float(f), float(a), float(p)) for f, a, p in zip(frequencies, amps, phases)
        )
        return cls(tones, amplitude_unit)

    def __len__(self):
        return len(self.tones)

    def __iter__(self):
        return iter(self.tones)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([t.frequency for t in self.tones], dtype=float)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.tones], dtype=float)

    @property
    def phases(self) -> np.ndarray:
        return np.array([t.phase for t in self.tones], dtype=float)

    def with_phases(self, phases) -> "ToneComb":
        return ToneComb(
            tuple(Tone(t.frequency, t.amplitude, p) for t, p in zip(self.tones, phases)),
            self.amplitude_unit,
        )

    def scaled(self, gain) -> "ToneComb":
        return ToneComb(
            tuple(Tone(t.frequency, t.amplitude * gain, t.phase) for t in self.tones),
            self.amplitude_unit,
        )


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled real signal."""

    samples: np.ndarray
    sample_rate: float
    unit: str = "volt"

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform needs a non-empty 1-D sample array")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.samples.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def replace(self, samples=None, sample_rate=None, unit=None) -> "Waveform":
        return Waveform(
            self.samples if samples is None else samples,
            self.sample_rate if sample_rate is None else sample_rate,
            self.unit if unit is None else unit,
        )

    def __add__(self, other):
        if isinstance(other, Waveform):
            _check_compatible(self, other)
            return self.replace(self.samples + other.samples)
        return self.replace(self.samples + other)

    def __mul__(self, gain):
        return self.replace(self.samples * gain)

    __rmul__ = __mul__


def _check_compatible(a: Waveform, b: Waveform):
    if a.n_samples != b.n_samples or a.sample_rate != b.sample_rate:
        raise ValueError("waveforms differ in length or sample rate")


def bin_index(frequency, sample_rate, n_samples, strict=True):
    """Return the FFT bin holding ``frequency``.

    With ``strict`` a frequency that is not on a bin centre raises
    :class:`FrequencyRangeError`.
    """
    k = frequency * n_samples / sample_rate
    kr = int(round(k))
    if strict and abs(k - kr) > BIN_TOL:
        raise FrequencyRangeError(
            f"{frequency:g} Hz is not bin-centred for fs={sample_rate:g}, N={n_samples}"
        )
    return kr


def is_coherent(frequency, sample_rate, n_samples) -> bool:
    k = frequency * n_samples / sample_rate
    return abs(k - round(k)) <= BIN_TOL


def synthesize_comb(comb: ToneComb, sample_rate, n_samples, seed=None) -> Waveform:
    """Sum of the comb's cosines, sampled at ``sample_rate``.

    If ``seed`` is given the comb phases are replaced by phases drawn
    uniformly in [0, 2*pi), one per tone in comb order.  Bin-centred combs
    are built with a single inverse FFT; others fall back to direct
    summation.
    """
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    freqs = comb.frequencies
    amps = comb.amplitudes
    if seed is not None:
        phases = np.random.default_rng(seed).uniform(0.0, TWO_PI, len(comb))
    else:
        phases = comb.phases
    nyquist = sample_rate / 2.0
    bad = freqs >= nyquist
    if np.any(bad):
        raise FrequencyRangeError(
            f"tone at {freqs[bad][0]:g} Hz is at or above Nyquist ({nyquist:g} Hz)"
        )
    if len(comb) == 0:
        return Waveform(np.zeros(n_samples), sample_rate, comb.amplitude_unit)

    k = freqs * n_samples / sample_rate
    kr = np.round(k)
    if np.all(np.abs(k - kr) <= BIN_TOL) and n_samples > 1:
        spec = np.zeros(n_samples // 2 + 1, dtype=complex)
        kr = kr.astype(int)
        dc = kr == 0
        np.add.at(spec, kr[~dc], 0.5 * n_samples * amps[~dc] * np.exp(1j * phases[~dc]))
        spec[0] += n_samples * np.sum(amps[dc] * np.cos(phases[dc]))
        samples = np.fft.irfft(spec, n_samples)
    else:
        t = np.arange(n_samples) / sample_rate
        samples = np.zeros(n_samples)
        for f, a, p in zip(freqs, amps, phases):
            samples += a * np.cos(TWO_PI * f * t + p)
    return Waveform(samples, sample_rate, comb.amplitude_unit)


def phase_ramp(frequency, n_samples, sample_rate) -> np.ndarray:
    """``2 pi f i / fs`` for i = 0..n-1, reduced modulo one cycle before scaling.

    Exact when ``frequency`` is a whole number of hertz and
    ``frequency * n_samples < 2**53``.
    """
    i = np.arange(n_samples, dtype=float)
    return TWO_PI * np.mod(frequency * i, sample_rate) / sample_rate


def sine(frequency, amplitude, sample_rate, n_samples, phase=0.0, unit="volt") -> Waveform:
    """Single cosine; convenience wrapper over :func:`synthesize_comb`."""
    comb = ToneComb((Tone(frequency, amplitude, phase),), unit)
    return synthesize_comb(comb, sample_rate, n_samples)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided power spectrum.

    ``power`` holds linear mean-square power per bin (signal units
    squared); ``ref_power`` is the linear power mapped to 0 dB.
    """

    bin_width: float
    power: np.ndarray
    reference: str
    ref_power: float
    carrier_power: Optional[float] = None

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.power.size) * self.bin_width

    @property
    def power_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.power / self.ref_power)

    def bin_of(self, frequency) -> int:
        return int(round(frequency / self.bin_width))

    def level(self, frequency) -> float:
        """Level in dB (spectrum reference) of the bin nearest ``frequency``."""
        p = self.power[self.bin_of(frequency)]
        return -math.inf if p <= 0 else 10.0 * math.log10(p / self.ref_power)

    def lines(self, threshold_db, exclude_dc=False):
        """(frequency, level_db) of every bin at or above ``threshold_db``."""
        db = self.power_db
        idx = np.flatnonzero(db >= threshold_db)
        if exclude_dc:
            idx = idx[idx > 0]
        return [(float(i * self.bin_width), float(db[i])) for i in idx]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frequency_hz", "power_db", "reference"])
        for f, p in zip(self.frequencies, self.power_db):
            writer.writerow([f"{f:.6f}", f"{p:.6f}", self.reference])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def power_spectrum(samples: np.ndarray) -> np.ndarray:
    """Linear one-sided periodogram; sums to the mean square of ``samples``."""
    n = samples.size
    p = np.abs(np.fft.rfft(samples)) ** 2 / float(n) ** 2
    if n % 2 == 0:
        p[1:-1] *= 2.0
    else:
        p[1:] *= 2.0
    return p


def spectrum(w: Waveform, reference="dBc", fullscale=None, carrier_bin=None) -> Spectrum:
    """Periodogram of ``w`` referenced to full scale, a carrier or 1 mW.

    ``fullscale`` is the peak amplitude of a full-scale sine (dBFS);
    ``carrier_bin`` indexes the carrier (dBc).  dBm assumes volts into
    50 ohm.
    """
    p = power_spectrum(w.samples)
    carrier = None
    if reference == "dBFS":
        if fullscale is None:
            raise ValueError("dBFS reference needs fullscale")
        ref = fullscale**2 / 2.0
    elif reference == "dBc":
        if carrier_bin is None:
            raise ValueError("dBc reference needs carrier_bin")
        carrier = float(p[carrier_bin])
        ref = carrier
    elif reference == "dBm":
        ref = R_REF * 1e-3
    else:
        raise ValueError(f"reference must be one of {REFERENCES}")
    return Spectrum(w.bin_width, p, reference, ref, carrier)


def noise_floor(spec: Spectrum, exclude=(), guard_bins=0, outlier_factor=None) -> float:
    """Mean per-bin noise level in dB (spectrum reference).

    DC and the bins in ``exclude`` (+/- ``guard_bins``) are left out.  With
    ``outlier_factor`` any bin more than that many times the median is
    dropped too, which suits random noise (exponentially distributed bins)
    but not deterministic quantization error, whose power sits in few bins.
    """
    mask = np.ones(spec.power.size, dtype=bool)
    mask[0] = False
    for b in exclude:
        lo = max(0, int(b) - guard_bins)
        mask[lo : int(b) + guard_bins + 1] = False
    vals = spec.power[mask]
    med = np.median(vals)
    if outlier_factor is not None and med > 0:
        vals = vals[vals <= outlier_factor * med]
    return 10.0 * math.log10(np.mean(vals) / spec.ref_power)


def to_dbm(v, dc=False) -> float:
    """Power in dBm of a sine of peak ``v`` volts (or a DC level) into 50 ohm.

    Returns ``-inf`` for zero input.
    """
    if v < 0:
        raise ValueError("voltage must be >= 0")
    if v == 0:
        return -math.inf
    load = R_REF if dc else 2.0 * R_REF
    return 20.0 * math.log10(v) - 10.0 * math.log10(load * 1e-3)


def dbm_to_vpeak(dbm) -> float:
    """Peak volts of a sine carrying ``dbm`` into 50 ohm."""
    return math.sqrt(2.0 * R_REF * 1e-3 * 10.0 ** (dbm / 10.0))


def brickwall_lowpass(w: Waveform, cutoff) -> Waveform:
    """Zero every bin above ``cutoff`` and transform back."""
    nyq = w.sample_rate / 2.0
    if not 0 < cutoff < nyq:
        raise FrequencyRangeError(f"cutoff {cutoff:g} Hz outside (0, {nyq:g})")
    n = w.n_samples
    spec = np.fft.rfft(w.samples)
    spec[np.arange(spec.size) * w.bin_width > cutoff] = 0.0
    return w.replace(np.fft.irfft(spec, n))


def upsample(w: Waveform, factor: int) -> Waveform:
    """Ideal band-limited interpolation by an integer factor.

    Equivalent to zero-stuffing followed by a brick-wall filter at the
    original Nyquist frequency and a gain of ``factor``.
    """
    factor = int(factor)
    if factor == 1:
        return w
    n = w.n_samples
    spec = np.fft.rfft(w.samples)
    big = np.zeros(n * factor // 2 + 1, dtype=complex)
    big[: spec.size] = spec * factor
    if n % 2 == 0:
        # the old Nyquist bin is shared by +/- fs/2
        big[n // 2] *= 0.5
    return Waveform(np.fft.irfft(big, n * factor), w.sample_rate * factor, w.unit)


def decimate(w: Waveform, factor: int) -> Waveform:
    """Keep every ``factor``-th sample; the input must already be band-limited."""
    factor = int(factor)
    if w.n_samples % factor:
        raise ValueError("record length must be a multiple of the decimation factor")
    return Waveform(w.samples[::factor], w.sample_rate / factor, w.unit)


def quantization_floor_dbc(n_bits, sample_rate, bin_width) -> float:
    """Ideal N-bit quantization noise per bin relative to a full-scale sine."""
    return -6.02 * n_bits - 1.76 - 10.0 * math.log10(sample_rate / 2.0) + 10.0 * math.log10(bin_width)


def coherent_frequency(target, sample_rate, n_samples, odd=True) -> float:
    """Nearest bin-centred frequency to ``target``.

    With ``odd`` the bin index is forced odd and coprime with the record
    length so quantization error spreads over the whole band instead of
    collecting in a few harmonics.
    """
    k = int(round(target * n_samples / sample_rate))
    if odd:
        step = 0
        while True:
            for cand in (k + step, k - step):
                if cand > 0 and math.gcd(cand, n_samples) == 1:
                    return cand * sample_rate / n_samples
            step += 1
    return k * sample_rate / n_samples


def alias_frequency(frequency, sample_rate) -> float:
    """Where a real tone at ``frequency`` lands in [0, fs/2] after sampling."""
    f = math.fmod(frequency, sample_rate)
    return sample_rate - f if f > sample_rate / 2 else f
