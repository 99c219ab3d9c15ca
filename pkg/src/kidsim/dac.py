"""
Behavioral model of a 16-bit, 2 GS/s DAC.

The transfer adds a per-code level error to the ideal staircase,
``V[code] = code * V_s + INL[code]``, where INL is the running sum of the
per-code step errors (DNL).  The profile is a reflected random walk plus a
smooth odd polynomial bow; the bow is what produces discrete odd
harmonics.  White Gaussian noise at a fixed spectral density relative to a
full-scale sine is added after the transfer, and an optional rate limiter
models slewing.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import chebyshev, polynomial

from .errors import ClippingError
from .signal import Waveform

PROFILE_MARGIN = 1e-9  # LSB kept clear of the bounds against cumsum round-off


def chebyshev_bow(levels):
    """Power-series INL coefficients (LSB, in ``x = code / 2**(n-1)``).

    ``levels`` maps harmonic order ``k`` to the amplitude in LSB that the
    k-th harmonic of a full-scale sine should have.  Each order is realised
    by a Chebyshev polynomial ``T_k``, whose magnitude never exceeds the
    requested amplitude on [-1, 1].
    """
    order = max(levels) if levels else 0
    cheb = np.zeros(order + 1)
    for k, amp in levels.items():
        cheb[k] = amp
    return tuple(float(c) for c in chebyshev.cheb2poly(cheb))


def harmonic_amplitude_lsb(level_dbc, n_bits):
    """Harmonic amplitude in LSB that sits ``level_dbc`` below a full-scale sine."""
    return 2 ** (n_bits - 1) * 10.0 ** (level_dbc / 20.0)


# HD3 at -93 dBc and HD5 at -108 dBc for a full-scale sine.
DAC_SMOOTH_INL = chebyshev_bow({3: harmonic_amplitude_lsb(-93.0, 16), 5: harmonic_amplitude_lsb(-108.0, 16)})


@dataclass(frozen=True)
class DacParams:
    n_bits: int = 16
    fullscale_vpp: float = 1.0
    sample_rate: float = 2e9
    noise_density: Optional[float] = -163.0  # dBc/Hz re full-scale sine, None = off
    dnl_bound: float = 1.0  # LSB
    inl_bound: float = 1.0  # LSB
    smooth_inl_coeffs: tuple = DAC_SMOOTH_INL
    slew_max: Optional[float] = None  # V/s

    def __post_init__(self):
        object.__setattr__(self, "smooth_inl_coeffs", tuple(float(c) for c in self.smooth_inl_coeffs))
        if int(self.n_bits) != self.n_bits or self.n_bits < 2:
            raise ValueError("n_bits must be an integer >= 2")
        if not self.fullscale_vpp > 0:
            raise ValueError("fullscale_vpp must be > 0")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if self.dnl_bound < 0 or self.inl_bound < 0:
            raise ValueError("dnl_bound and inl_bound must be >= 0")
        if self.slew_max is not None and not self.slew_max > 0:
            raise ValueError("slew_max must be > 0")

    @classmethod
    def ideal(cls, **overrides):
        """No DNL/INL, no noise, no slewing."""
        base = dict(noise_density=None, dnl_bound=0.0, inl_bound=0.0, smooth_inl_coeffs=(), slew_max=None)
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


def noise_sigma(noise_density, fullscale_peak, sample_rate) -> float:
    """RMS of white noise with ``noise_density`` dBc/Hz re a full-scale sine."""
    if noise_density is None:
        return 0.0
    p_fs = fullscale_peak**2 / 2.0
    return math.sqrt(p_fs * 10.0 ** (noise_density / 10.0) * sample_rate / 2.0)


@dataclass(frozen=True, eq=False)
class NonlinearityProfile:
    """Per-code step errors of a converter, in volts.

    ``dnl_error[i]`` belongs to code ``code_min + i``; the level error of a
    code (its INL) is the running sum up to and including it.
    """

    dnl_error: np.ndarray
    n_bits: int
    v_step: float

    def __post_init__(self):
        dnl = np.array(self.dnl_error, dtype=float)
        if dnl.size != 2**self.n_bits:
            raise ValueError("profile needs one entry per code")
        dnl.setflags(write=False)
        object.__setattr__(self, "dnl_error", dnl)
        inl = np.cumsum(dnl)
        inl.setflags(write=False)
        object.__setattr__(self, "_inl", inl)

    @classmethod
    def ideal(cls, n_bits, v_step):
        return cls(np.zeros(2**n_bits), n_bits, v_step)

    @property
    def inl(self) -> np.ndarray:
        """Level error per code, volts."""
        return self._inl

    @property
    def code_min(self) -> int:
        return -(2 ** (self.n_bits - 1))

    def max_dnl_lsb(self) -> float:
        return float(np.max(np.abs(self.dnl_error))) / self.v_step

    def max_inl_lsb(self) -> float:
        return float(np.max(np.abs(self.inl))) / self.v_step

    def transfer(self) -> np.ndarray:
        """Output level of every code, volts."""
        codes = np.arange(2**self.n_bits) + self.code_min
        return codes * self.v_step + self.inl


def _fold(y, half_width):
    """Reflect ``y`` into [-w, w] (triangle wave of period 4w, unit slope at 0)."""
    if half_width <= 0:
        return np.zeros_like(y)
    w = half_width
    return np.abs(np.mod(y - w, 4 * w) - 2 * w) - w


def chebyshev_content(values, orders):
    """Chebyshev coefficients of a per-code table as seen by a full-scale sine.

    The projection uses the arcsine weight, which is the code density of a
    full-scale sine, so coefficient k is the k-th harmonic amplitude.
    """
    n = values.size
    m = 8192
    theta = (np.arange(m) + 0.5) * np.pi / m
    idx = np.clip(np.rint((np.cos(theta) + 1) * (n / 2)), 0, n - 1).astype(int)
    w = values[idx]
    coef = np.array([2.0 / m * np.sum(w * np.cos(k * theta)) for k in range(orders + 1)])
    coef[0] /= 2
    return coef


def build_profile(n_bits, v_step, dnl_bound, inl_bound, smooth_coeffs, seed, detrend_order=5) -> NonlinearityProfile:
    """Reflected random walk plus smooth polynomial INL.

    The walk takes uniform steps and is reflected into the room the smooth
    term leaves under ``inl_bound``.  Its Chebyshev content up to
    ``detrend_order`` is then removed, so the low harmonics (and the mean
    offset) of a full-scale sine are set by the smooth term alone, and it
    is rescaled to stay inside both bounds.  Near the bottom code the INL
    is clipped to a ramp so that the first step also meets ``dnl_bound``.

    Raises ValueError when the smooth term alone breaks the DNL or INL
    bound.
    """
    if seed is None:
        raise ValueError("a seed is required for reproducible profiles")
    n = 2**n_bits
    x = (np.arange(n) - 2 ** (n_bits - 1)) / 2 ** (n_bits - 1)
    smooth = polynomial.polyval(x, smooth_coeffs) if len(smooth_coeffs) else np.zeros(n)
    s_max = float(np.max(np.abs(smooth)))
    s_step = float(np.max(np.abs(np.diff(smooth)))) if n > 1 else 0.0
    if s_max > inl_bound + 1e-12:
        raise ValueError(f"smooth INL reaches {s_max:.3f} LSB, beyond the {inl_bound} LSB INL bound")
    if s_step > dnl_bound + 1e-12:
        raise ValueError("smooth INL alone violates the DNL bound")

    half = max(0.0, inl_bound - s_max - PROFILE_MARGIN)
    step = max(0.0, min(dnl_bound - s_step - PROFILE_MARGIN, half))
    rng = np.random.default_rng(seed)
    start = rng.uniform(-half, half) if half > 0 else 0.0
    incr = rng.uniform(-step, step, n - 1) if step > 0 else np.zeros(n - 1)
    walk = _fold(start + np.concatenate([[0.0], np.cumsum(incr)]), half)
    if detrend_order is not None:
        walk = walk - chebyshev.chebval(x, chebyshev_content(walk, detrend_order))
        peak = np.max(np.abs(walk))
        slope = np.max(np.abs(np.diff(walk))) if n > 1 else 0.0
        scale = 1.0
        if peak > half:
            scale = min(scale, half / peak)
        if slope > step:
            scale = min(scale, step / slope)
        walk = walk * scale
    inl = smooth + walk
    ramp = max(0.0, dnl_bound - PROFILE_MARGIN) * np.arange(1, n + 1)
    inl = np.clip(inl, -ramp, ramp)
    dnl = np.diff(inl, prepend=0.0)
    return NonlinearityProfile(dnl * v_step, n_bits, v_step)


def generate_profile(params, seed) -> NonlinearityProfile:
    """Profile for a converter described by ``params`` (DAC or ADC)."""
    return build_profile(
        params.n_bits, params.v_step, params.dnl_bound, params.inl_bound, params.smooth_inl_coeffs, seed
    )


def check_codes(codes: np.ndarray, n_bits, stage="dac"):
    lo, hi = -(2 ** (n_bits - 1)), 2 ** (n_bits - 1) - 1
    bad = np.flatnonzero((codes < lo) | (codes > hi))
    if bad.size:
        i = int(bad[0])
        raise ClippingError(i, codes[i], 2 ** (n_bits - 1), stage)


def dac_convert(codes: Waveform, profile: NonlinearityProfile, params: DacParams, seed=None) -> Waveform:
    """Codes to volts: staircase plus INL, white noise, optional slew limit.

    Codes are rounded to integers first.  Out-of-range codes raise
    :class:`ClippingError` naming the first offending sample.
    """
    c = np.rint(codes.samples)
    check_codes(c, params.n_bits)
    idx = (c - params.code_min).astype(np.int64)
    volts = c * params.v_step + profile.inl[idx]
    sigma = noise_sigma(params.noise_density, params.fullscale_peak, codes.sample_rate)
    if sigma > 0:
        volts = volts + np.random.default_rng(seed).normal(0.0, sigma, volts.size)
    out = Waveform(volts, codes.sample_rate, "volt")
    if params.slew_max is not None:
        out, _ = slew_limit(out, params.slew_max)
    return out


def slew_limit(w: Waveform, slew_max):
    """Clamp sample-to-sample steps to ``slew_max / sample_rate``.

    Returns the limited waveform and the number of clamped steps.
    """
    if not slew_max > 0:
        raise ValueError("slew_max must be > 0")
    dmax = slew_max / w.sample_rate
    x = w.samples
    if x.size < 2 or np.max(np.abs(np.diff(x))) <= dmax:
        return w.replace(x.copy()), 0
    y = np.empty_like(x)
    y[0] = x[0]
    prev = x[0]
    count = 0
    for i in range(1, x.size):
        d = x[i] - prev
        if d > dmax:
            prev += dmax
            count += 1
        elif d < -dmax:
            prev -= dmax
            count += 1
        else:
            prev = x[i]
        y[i] = prev
    return w.replace(y), count


@dataclass
class CurveReport:
    """Peak-code statistics of random-phase combs versus tone count."""

    bits_per_tone: int
    runs: int
    record_len: int
    n_tones: np.ndarray
    mean_max_code: np.ndarray
    std_max_code: np.ndarray
    mean_max_slew: np.ndarray  # V/s at the DAC output
    code_limit: int = 2**15
    slew_max: Optional[float] = None
    slew_violations: np.ndarray = field(default=None)

    @property
    def crossing(self) -> Optional[int]:
        """Smallest swept tone count whose mean peak code reaches the limit."""
        hit = np.flatnonzero(self.mean_max_code >= self.code_limit)
        return int(self.n_tones[hit[0]]) if hit.size else None

    @property
    def interpolated_crossing(self) -> Optional[float]:
        hit = np.flatnonzero(self.mean_max_code >= self.code_limit)
        if not hit.size:
            return None
        i = int(hit[0])
        if i == 0:
            return float(self.n_tones[0])
        n0, n1 = self.n_tones[i - 1], self.n_tones[i]
        m0, m1 = self.mean_max_code[i - 1], self.mean_max_code[i]
        return float(n0 + (self.code_limit - m0) * (n1 - n0) / (m1 - m0))

    @property
    def slew_crossing(self) -> Optional[int]:
        """Smallest swept tone count whose mean peak slew exceeds ``slew_max``."""
        if self.slew_max is None:
            return None
        hit = np.flatnonzero(self.mean_max_slew > self.slew_max)
        return int(self.n_tones[hit[0]]) if hit.size else None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n_tones", "mean_max_code", "std_max_code"])
        for n, m, s in zip(self.n_tones, self.mean_max_code, self.std_max_code):
            writer.writerow([int(n), f"{m:.6f}", f"{s:.6f}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


MULTIPLEX_RECORD_LEN = 2**16


def random_comb_bins(rng, n_tones, n_band_bins):
    """Distinct bin indices drawn uniformly from [1, n_band_bins)."""
    if n_tones > n_band_bins - 1:
        raise ValueError("more tones than available bins in the band")
    return np.sort(rng.choice(np.arange(1, n_band_bins), n_tones, replace=False))


def multiplex_limit(
    bits_per_tone,
    n_tones_sweep,
    runs=50,
    record_len=MULTIPLEX_RECORD_LEN,
    seed=0,
    params: DacParams = DacParams(),
    bandwidth=1e9,
    slew_max=None,
) -> CurveReport:
    """Mean and spread of the peak code of random-phase combs.

    Tones sit on distinct random bin centres in [0, ``bandwidth``), each
    with amplitude ``2**(bits_per_tone - 1)`` and a uniform random phase
    per run.  Every (tone count, run) pair has its own seed derived from
    ``seed``, so points can be computed in any order.
    """
    amp = 2.0 ** (bits_per_tone - 1)
    n_band = int(round(bandwidth * record_len / params.sample_rate))
    n_band = min(n_band, record_len // 2)
    sweep = np.asarray(list(n_tones_sweep), dtype=int)
    means, stds, slews, viols = [], [], [], []
    for n in sweep:
        peaks, peak_slew, v = [], [], 0
        for r in range(runs):
            rng = np.random.default_rng([int(seed), int(n), r])
            x = np.zeros(record_len)
            if n > 0:
                bins = random_comb_bins(rng, n, n_band)
                spec = np.zeros(record_len // 2 + 1, dtype=complex)
                spec[bins] = 0.5 * record_len * amp * np.exp(1j * rng.uniform(0, 2 * np.pi, n))
                x = np.fft.irfft(spec, record_len)
            peaks.append(np.max(np.abs(x)))
            s = np.max(np.abs(np.diff(x))) * params.v_step * params.sample_rate
            peak_slew.append(s)
            if slew_max is not None and s > slew_max:
                v += 1
        means.append(np.mean(peaks))
        stds.append(np.std(peaks))
        slews.append(np.mean(peak_slew))
        viols.append(v)
    return CurveReport(
        bits_per_tone=int(bits_per_tone),
        runs=int(runs),
        record_len=int(record_len),
        n_tones=sweep,
        mean_max_code=np.array(means),
        std_max_code=np.array(stds),
        mean_max_slew=np.array(slews),
        code_limit=2 ** (params.n_bits - 1),
        slew_max=slew_max,
        slew_violations=np.array(viols),
    )


def full_band_slew(params: DacParams, bandwidth=1e9) -> float:
    """Slope of a full-scale sine at the band edge, V/s."""
    return 2 * np.pi * bandwidth * params.fullscale_peak
