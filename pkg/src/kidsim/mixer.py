"""
Demodulating mixer with a separable polynomial nonlinearity.

``y(t) = sum_{m=1..2, n=1..4} c[m][n] * rf(t)**m * A_LO**n * cos(n w_LO t)``
followed by an ideal low-pass filter at the output cutoff.  Every term is a
product of cosines, so the output line set can also be predicted exactly
in the frequency domain (:func:`predict_imds`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FitError, NyquistError
from .lines import LineSet, power_lines
from .modulator import occupied_bandwidth
from .signal import ToneComb, Waveform, dbm_to_vpeak, phase_ramp, to_dbm
from .spurs import SpurTable

RF_ORDERS = 2
LO_ORDERS = 4

# Fitted to the packaged 870 MHz line table (RF 2070 MHz at 0.1 V, LO 1.2 GHz).
FITTED_COEFFS = (
    (2.0, 0.03556558821, 0.0, 0.0),
    (0.0, 0.0, 0.1004754572, 0.1592428682),
)


def _coeffs(values):
    rows = tuple(tuple(float(c) for c in row) for row in values)
    if len(rows) != RF_ORDERS or any(len(r) != LO_ORDERS for r in rows):
        raise ValueError(f"nl_coeffs must be {RF_ORDERS} x {LO_ORDERS}")
    return rows


@dataclass(frozen=True)
class MixerParams:
    """``nl_coeffs[m-1][n-1]`` is the coefficient of ``rf**m`` times LO harmonic n."""

    lo_frequency: float = 1.2e9
    lo_amplitude: float = 1.0
    nl_coeffs: tuple = FITTED_COEFFS
    output_cutoff: float = 1e9

    def __post_init__(self):
        object.__setattr__(self, "nl_coeffs", _coeffs(self.nl_coeffs))
        if self.nl_coeffs[0][0] == 0:
            raise ValueError("c[1][1] (the mixing term) must be nonzero")
        if not self.output_cutoff > 0:
            raise ValueError("output_cutoff must be > 0")
        if not self.lo_frequency > 0:
            raise ValueError("lo_frequency must be > 0")
        if not self.lo_amplitude > 0:
            raise ValueError("lo_amplitude must be > 0")

    @classmethod
    def ideal(cls, **overrides):
        base = dict(nl_coeffs=((1.0, 0, 0, 0), (0, 0, 0, 0)))
        base.update(overrides)
        return cls(**base)

    def terms(self):
        """(m, n, c) for every nonzero coefficient."""
        return [
            (m, n, c)
            for m, row in enumerate(self.nl_coeffs, start=1)
            for n, c in enumerate(row, start=1)
            if c != 0
        ]

    def conversion_gain(self) -> float:
        """Amplitude gain of the desired (1, 1) product."""
        return self.nl_coeffs[0][0] * self.lo_amplitude / 2.0


def max_product_frequency(params: MixerParams, rf_bandwidth) -> float:
    return max(m * rf_bandwidth + n * params.lo_frequency for m, n, _ in params.terms())


def required_oversample(params: MixerParams, rf_bandwidth, sample_rate) -> int:
    """Smallest integer rate factor that keeps aliased products above the cutoff."""
    top = max_product_frequency(params, rf_bandwidth)
    return max(1, math.ceil((top + params.output_cutoff) / sample_rate + 1e-12))


def demodulate(rf: Waveform, params: MixerParams, oversample=None) -> Waveform:
    """Mix ``rf`` with the LO, apply the polynomial and the output low-pass.

    The products are formed at ``oversample`` times the input rate (chosen
    automatically by default) so that no product aliases into the output
    band.  An explicit factor that would alias raises :class:`NyquistError`.
    """
    fs, n = rf.sample_rate, rf.n_samples
    cutoff = params.output_cutoff
    if cutoff >= fs / 2:
        raise NyquistError(f"output cutoff {cutoff:g} Hz is not below Nyquist {fs / 2:g} Hz")
    bw = occupied_bandwidth(rf)
    need = required_oversample(params, bw, fs)
    if oversample is None:
        oversample = need
    elif oversample < need:
        top = max_product_frequency(params, bw)
        raise NyquistError(
            f"products up to {top / 1e6:.1f} MHz alias into the output band at "
            f"{oversample} x {fs / 1e6:.1f} MS/s; need oversample >= {need}"
        )
    big_n = n * oversample
    spec = np.fft.rfft(rf.samples)
    if oversample > 1:
        big = np.zeros(big_n // 2 + 1, dtype=complex)
        big[: spec.size] = spec * oversample
        if n % 2 == 0:
            big[n // 2] *= 0.5
        x = np.fft.irfft(big, big_n)
    else:
        x = rf.samples
    y = np.zeros(big_n)
    powers = {1: x}
    if any(m == 2 for m, _, _ in params.terms()):
        powers[2] = x * x
    for m, k, c in params.terms():
        lo = params.lo_amplitude**k * np.cos(phase_ramp(k * params.lo_frequency, big_n, fs * oversample))
        y += c * powers[m] * lo
    out = np.fft.rfft(y) / oversample
    keep = np.arange(n // 2 + 1) * rf.bin_width <= cutoff
    res = np.zeros(n // 2 + 1, dtype=complex)
    res[keep] = out[: n // 2 + 1][keep]
    return Waveform(np.fft.irfft(res, n), fs, "volt")


def as_lines(rf_lines, amplitude=1.0) -> LineSet:
    """Coerce RF lines to a :class:`LineSet`.

    Accepts a LineSet, a ToneComb, a SpurTable (dBm), or a sequence of
    frequencies, ``(f, amplitude)`` or ``(f, amplitude, phase)`` entries.
    Plain frequencies get ``amplitude``.
    """
    if isinstance(rf_lines, LineSet):
        return rf_lines
    if isinstance(rf_lines, ToneComb):
        return LineSet.from_comb(rf_lines, "rf")
    if isinstance(rf_lines, SpurTable):
        rows = list(rf_lines)
        return LineSet.from_lists(
            [r.frequency for r in rows],
            [dbm_to_vpeak(r.power_dbm) for r in rows],
            [(i,) for i in range(len(rows))],
            ["rf"] * len(rows),
        )
    freqs, phasors = [], []
    for item in rf_lines:
        if np.ndim(item) == 0:
            f, a, ph = float(item), amplitude, 0.0
        else:
            f, a, ph = (tuple(item) + (0.0,))[:3]
        freqs.append(f)
        phasors.append(a * np.exp(1j * ph))
    return LineSet.from_lists(freqs, phasors, [(i,) for i in range(len(freqs))], ["rf"] * len(freqs))


def mixer_lines(rf: LineSet, params: MixerParams, floor=0.0, targets=None, tol=0.0) -> LineSet:
    """All mixer output lines before the output filter."""
    out = LineSet.empty()
    for m, k, c in params.terms():
        lo = LineSet.from_lists([k * params.lo_frequency], [params.lo_amplitude**k], [()], ["lo"])
        pm = power_lines(rf, m, c, f"m{m}n{k}", floor=2 * floor / params.lo_amplitude**k)
        out = out + pm.product(lo, f"m{m}n{k}", floor=floor, targets=targets, tol=tol)
    return out


def predict_imds(rf_lines, params: MixerParams, band=None, sample_rate=None, rf_amplitude=1.0,
                 resolution=8e3, floor=1e-15) -> SpurTable:
    """Predicted output lines of :func:`demodulate` in ``band``.

    Every ``|+/- m f_RF +/- n f_LO|`` product (m <= 2, n <= 4, including
    cross terms between RF lines) is enumerated with its exact amplitude.
    Lines in the same ``resolution``-wide bin with the same sources are merged
    coherently.  With ``sample_rate`` the lines are first folded into the
    first Nyquist zone.  Origin labels read ``m<m>n<n>[sources]``.
    """
    lines = predict_lines(rf_lines, params, band, sample_rate, rf_amplitude, resolution, floor)
    return lines_to_table(lines)


def predict_lines(rf_lines, params: MixerParams, band=None, sample_rate=None, rf_amplitude=1.0,
                  resolution=8e3, floor=1e-15) -> LineSet:
    rf = as_lines(rf_lines, rf_amplitude)
    if len(rf) == 0:
        return LineSet.empty()
    lo_f, hi_f = (0.0, params.output_cutoff) if band is None else band
    if sample_rate is not None and not (0 <= lo_f <= hi_f <= sample_rate / 2):
        raise ValueError("band must lie within [0, Nyquist]")
    out = mixer_lines(rf, params, floor=floor)
    if sample_rate is not None:
        out = out.fold(sample_rate)
    out = out.band(lo_f, hi_f).merged(resolution)
    return out.above(floor)


def lines_to_table(lines: LineSet) -> SpurTable:
    rows = {}
    for f, a, p, lab in zip(lines.freq, lines.amplitude, lines.prov, lines.label):
        src = ",".join(str(i) for i in sorted(p))
        origin = f"{lab}[{src}]" if src else lab
        key = (float(f), origin)
        dc = f == 0
        if key in rows:
            continue
        rows[key] = to_dbm(float(a), dc=dc)
    return SpurTable(tuple((f, p, o) for (f, o), p in sorted(rows.items())))


def single_tone_products(f_rf, f_lo, cutoff):
    """(m, n, frequency, gain) of every in-band product of one RF tone.

    ``gain * c[m][n] * a**m * A_LO**n`` is the line amplitude for an RF
    tone of amplitude ``a``.
    """
    out = []
    for n in range(1, LO_ORDERS + 1):
        f_n = n * f_lo
        cands = [(1, f_rf + f_n, 0.5), (1, abs(f_rf - f_n), 0.5),
                 (2, f_n, 0.5), (2, 2 * f_rf + f_n, 0.25), (2, abs(2 * f_rf - f_n), 0.25)]
        for m, f, g in cands:
            if f <= cutoff:
                out.append((m, n, f, g))
    return out


def assign_lines(measured: SpurTable, f_rf, f_lo, cutoff=1e9, tol=1e3):
    """Match measured rows to (m, n) products of one RF tone.

    Returns ``(assigned, unassigned)``: a list of (row, m, n, gain) and the
    rows with no hypothesis.  Rows that fit two different (m, n) products
    raise :class:`FitError`.
    """
    hyps = single_tone_products(f_rf, f_lo, cutoff)
    assigned, unassigned = [], []
    for row in measured:
        hits = [(m, n, g) for m, n, f, g in hyps if abs(f - row.frequency) <= tol]
        orders = sorted({(m, n) for m, n, _ in hits})
        if not hits:
            unassigned.append(row)
        elif len(orders) > 1:
            names = " and ".join(f"(m={m}, n={n})" for m, n in orders)
            raise FitError(f"line at {row.frequency / 1e6:.3f} MHz is ambiguous between {names}")
        else:
            m, n, g = hits[0]
            assigned.append((row, m, n, g))
    return assigned, unassigned


def fit_mixer(measured: SpurTable, f_rf, f_lo, rf_amplitude, lo_amplitude=1.0, output_cutoff=1e9,
              tol=1e3) -> MixerParams:
    """Solve ``c[m][n]`` from measured output line powers of one RF tone.

    Coefficients are taken non-negative (only magnitudes are observable).
    Rows that match no product are reported with a warning.
    """
    if not rf_amplitude > 0:
        raise FitError("rf_amplitude must be > 0")
    assigned, unassigned = assign_lines(measured, f_rf, f_lo, output_cutoff, tol)
    if unassigned:
        freqs = ", ".join(f"{r.frequency / 1e6:.3f}" for r in unassigned)
        warnings.warn(f"unassigned mixer lines (MHz): {freqs}", stacklevel=2)
    c = [[0.0] * LO_ORDERS for _ in range(RF_ORDERS)]
    seen = set()
    for row, m, n, g in assigned:
        if (m, n) in seen:
            continue
        seen.add((m, n))
        dc = row.frequency <= tol
        amp = dbm_to_vpeak(row.power_dbm) if not dc else math.sqrt(50 * 1e-3 * 10 ** (row.power_dbm / 10))
        c[m - 1][n - 1] = amp / (g * rf_amplitude**m * lo_amplitude**n)
    if c[0][0] == 0:
        raise FitError(f"demodulated line at {abs(f_rf - f_lo) / 1e6:.3f} MHz not found")
    return MixerParams(f_lo, lo_amplitude, c, output_cutoff)


def load_fixture(name="mixer_870mhz") -> SpurTable:
    from .modulator import load_fixture as _load

    return _load(name)
