"""
IQ modulator model with imbalanced LO harmonics.

The modulator output is::

    IQ = S_I * LO_Q + S_Q * LO_I + r * S_I + sum_k A_kLO sin(k w_LO t)

with ``LO_I = sum_k A_kI cos(k w_LO t)`` and ``LO_Q = sum_k A_kQ sin(k w_LO t)``
for k = 1..4.  For a tone ``S_I = a cos(wt)``, ``S_Q = a sin(wt)`` harmonic
k gives an upper sideband of amplitude ``a (A_kI + A_kQ) / 2`` at
``k f_LO + f`` and a lower one of amplitude ``a |A_kI - A_kQ| / 2`` at
``|k f_LO - f|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import FitError, NyquistError
from .signal import Waveform, _check_compatible, dbm_to_vpeak, phase_ramp, to_dbm
from .spurs import SpurTable

N_HARMONICS = 4
TONE_FEEDTHROUGH = 0.0112


def _amps(values, name):
    vals = tuple(float(v) for v in values)
    if len(vals) != N_HARMONICS:
        raise ValueError(f"{name} needs {N_HARMONICS} entries")
    if any(v < 0 for v in vals):
        raise ValueError(f"{name} must be >= 0")
    return vals


# Fitted to the packaged 850 MHz line table (see ``fit_params``).
FITTED_LO_I = (0.5106832824, 0.06249365301, 0.07867484785, 0.03514276365)
FITTED_LO_Q = (0.4964570471, 0.01750634699, 0.0220391851, 0.009844542367)
FITTED_LO_FEEDTHROUGH = (0.002511886432, 0.003981071706, 0.01, 0.1122018454)


@dataclass(frozen=True)
class ModulatorParams:
    lo_frequency: float = 1.2e9
    lo_i_amps: tuple = FITTED_LO_I
    lo_q_amps: tuple = FITTED_LO_Q
    lo_feedthrough_amps: tuple = FITTED_LO_FEEDTHROUGH  # volts
    tone_feedthrough_ratio: float = TONE_FEEDTHROUGH

    def __post_init__(self):
        if not self.lo_frequency > 0:
            raise ValueError("lo_frequency must be > 0")
        object.__setattr__(self, "lo_i_amps", _amps(self.lo_i_amps, "lo_i_amps"))
        object.__setattr__(self, "lo_q_amps", _amps(self.lo_q_amps, "lo_q_amps"))
        object.__setattr__(self, "lo_feedthrough_amps", _amps(self.lo_feedthrough_amps, "lo_feedthrough_amps"))
        if self.tone_feedthrough_ratio < 0:
            raise ValueError("tone_feedthrough_ratio must be >= 0")

    @classmethod
    def balanced(cls, lo_frequency=1.2e9):
        """Ideal quadrature modulator: upper sideband only."""
        return cls(lo_frequency, (1.0, 0, 0, 0), (1.0, 0, 0, 0), (0, 0, 0, 0), 0.0)


def occupied_bandwidth(w: Waveform, rel=1e-10) -> float:
    """Highest frequency carrying more than ``rel`` of the peak spectral amplitude."""
    mag = np.abs(np.fft.rfft(w.samples))
    if not mag.size or mag.max() == 0:
        return 0.0
    idx = np.flatnonzero(mag > rel * mag.max())
    return float(idx[-1] * w.bin_width)


def check_nyquist(params: ModulatorParams, baseband_max, sample_rate):
    nyq = sample_rate / 2
    for k in range(1, N_HARMONICS + 1):
        f_lo = k * params.lo_frequency
        mixes = params.lo_i_amps[k - 1] or params.lo_q_amps[k - 1]
        top = f_lo + baseband_max if mixes else f_lo
        if (mixes or params.lo_feedthrough_amps[k - 1]) and top >= nyq:
            raise NyquistError(
                f"LO harmonic {k} puts content at {top / 1e6:.1f} MHz, above "
                f"Nyquist {nyq / 1e6:.1f} MHz"
            )


def modulate(s_i: Waveform, s_q: Waveform, params: ModulatorParams, baseband_max=None) -> Waveform:
    """Time-domain modulator output for baseband inputs ``s_i`` and ``s_q``.

    ``baseband_max`` bounds the baseband content for the Nyquist check; by
    default it is measured from the input spectra.
    """
    _check_compatible(s_i, s_q)
    fs, n = s_i.sample_rate, s_i.n_samples
    if baseband_max is None:
        baseband_max = max(occupied_bandwidth(s_i), occupied_bandwidth(s_q))
    check_nyquist(params, baseband_max, fs)
    si, sq = s_i.samples, s_q.samples
    lo_i = np.zeros(n)
    lo_q = np.zeros(n)
    ft = np.zeros(n)
    for k in range(1, N_HARMONICS + 1):
        ai, aq, al = params.lo_i_amps[k - 1], params.lo_q_amps[k - 1], params.lo_feedthrough_amps[k - 1]
        if not (ai or aq or al):
            continue
        ph = phase_ramp(k * params.lo_frequency, n, fs)
        if ai:
            lo_i += ai * np.cos(ph)
        s = np.sin(ph)
        if aq:
            lo_q += aq * s
        if al:
            ft += al * s
    out = si * lo_q + sq * lo_i + params.tone_feedthrough_ratio * si + ft
    return Waveform(out, fs, "volt")


def sideband_amplitudes(params: ModulatorParams, a_tone):
    """(upper, lower) sideband amplitude for each LO harmonic k = 1..4."""
    return [
        (a_tone * (ai + aq) / 2.0, a_tone * abs(ai - aq) / 2.0)
        for ai, aq in zip(params.lo_i_amps, params.lo_q_amps)
    ]


def expected_lines(params: ModulatorParams, f_tone, a_tone):
    """Analytic output lines as (frequency, amplitude, label).

    Lines that share a frequency are not merged; callers pick tones that
    keep them apart.
    """
    out = []
    f_lo = params.lo_frequency
    for k, (up, lo) in enumerate(sideband_amplitudes(params, a_tone), start=1):
        out.append((k * f_lo + f_tone, up, f"{k}LO+tone"))
        out.append((abs(k * f_lo - f_tone), lo, f"{k}LO-tone"))
        out.append((k * f_lo, params.lo_feedthrough_amps[k - 1], f"{k}LO"))
    out.append((f_tone, params.tone_feedthrough_ratio * a_tone, "tone"))
    return out


def predict_table(params: ModulatorParams, f_tone, a_tone) -> SpurTable:
    """Analytic line powers in dBm (50 ohm); zero-amplitude lines are dropped."""
    rows = [(f, to_dbm(a), lab) for f, a, lab in expected_lines(params, f_tone, a_tone) if a > 0]
    return SpurTable(tuple(rows))


def _check_distinct(freqs, tol):
    f = np.sort(np.asarray(freqs))
    if np.any(np.diff(f) <= tol):
        raise FitError("tone and LO frequencies make two required lines coincide")


def fit_params(measured: SpurTable, f_lo, f_tone, a_tone, tol=1e3) -> ModulatorParams:
    """Invert the sideband relations from a measured line table.

    Rows are matched to the required lines by frequency within ``tol`` Hz.
    The sign ambiguity of ``A_kI - A_kQ`` is resolved with ``A_kI >= A_kQ``.
    """
    if not a_tone > 0:
        raise FitError("a_tone must be > 0")
    probe = ModulatorParams(f_lo, (1, 1, 1, 1), (0, 0, 0, 0), (1, 1, 1, 1), 1.0)
    wanted = expected_lines(probe, f_tone, a_tone)
    _check_distinct([f for f, _, _ in wanted], tol)

    def amp(freq, label):
        p = measured.power_at(freq, tol)
        if p is None:
            raise FitError(f"missing line {label} at {freq / 1e6:.3f} MHz")
        return dbm_to_vpeak(p)

    a_i, a_q, a_lo = [], [], []
    for k in range(1, N_HARMONICS + 1):
        up = amp(k * f_lo + f_tone, f"{k}LO+tone")
        lo = amp(abs(k * f_lo - f_tone), f"{k}LO-tone")
        if lo > up:
            raise FitError(f"lower sideband exceeds upper for LO harmonic {k}")
        s = 2 * up / a_tone
        d = 2 * lo / a_tone
        a_i.append((s + d) / 2)
        a_q.append((s - d) / 2)
        a_lo.append(amp(k * f_lo, f"{k}LO"))
    ratio = amp(f_tone, "tone") / a_tone
    return ModulatorParams(f_lo, tuple(a_i), tuple(a_q), tuple(a_lo), ratio)


def load_fixture(name) -> SpurTable:
    """Packaged reference line table, e.g. ``"modulator_850mhz"``."""
    text = resources.files("kidsim.data").joinpath(f"{name}.csv").read_text()
    return SpurTable.from_csv(text)
