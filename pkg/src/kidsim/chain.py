"""
End-to-end readout chain and corrupted-channel prediction.

Rate plan: the comb, both DAC channels and the ADC run at the baseband
rate (2 GS/s); the DAC outputs are interpolated by ``RF_FACTOR`` to the RF
rate (12 GS/s) for the TX filter, the modulator, the feedline and the
mixer, and the mixer output is decimated back.

The same chain is also propagated as spectral lines (:func:`chain_lines`)
to predict which tones share their bin with a spur that does not come
from the tone alone.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from numpy.polynomial import polynomial

from .adc import AdcParams, adc_convert_counted, adc_lines, codes_to_volts, image_factors
from .dac import DacParams, dac_convert, generate_profile
from .errors import ClippingError, FrequencyRangeError, NyquistError
from .lines import ENVIRONMENT, LineSet, power_lines
from .mixer import MixerParams, demodulate
from .modulator import ModulatorParams, modulate
from .signal import (
    ToneComb,
    Waveform,
    bin_index,
    brickwall_lowpass,
    decimate,
    phase_ramp,
    spectrum,
    synthesize_comb,
    upsample,
)
from .spurs import SpurTable

RF_FACTOR = 6


@dataclass(frozen=True)
class ChainSeeds:
    comb: Optional[int] = None  # random comb phases; None keeps the comb's own
    dac_profile: int = 1  # Q channel uses dac_profile + 1
    dac_noise: int = 2  # Q channel uses dac_noise + 1
    adc_profile: int = 3
    adc_noise: int = 4


@dataclass(frozen=True)
class ChainConfig:
    comb: ToneComb = field(default_factory=lambda: ToneComb(()))
    dac: DacParams = field(default_factory=DacParams)
    modulator: ModulatorParams = field(default_factory=ModulatorParams)
    feedline_gain: float = 0.0  # dB, flat
    mixer: MixerParams = field(default_factory=MixerParams)
    adc: AdcParams = field(default_factory=AdcParams)
    lpf_cutoffs: tuple = (1e9, 1e9)  # (TX baseband, RX baseband)
    seeds: ChainSeeds = field(default_factory=ChainSeeds)
    n_samples: int = 250_000  # baseband record length
    retain_stages: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lpf_cutoffs", tuple(float(c) for c in self.lpf_cutoffs))
        if self.modulator.lo_frequency != self.mixer.lo_frequency:
            raise ValueError("modulator and mixer must share the LO frequency")
        if self.dac.sample_rate != self.adc.sample_rate:
            raise ValueError("DAC and ADC must run at the same baseband rate")
        if len(self.lpf_cutoffs) != 2 or min(self.lpf_cutoffs) <= 0:
            raise ValueError("lpf_cutoffs needs two positive cutoffs")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.comb.amplitude_unit != "code":
            raise ValueError("the chain comb is given in DAC codes")
        for f in self.comb.frequencies:
            if not 0 < f < self.lpf_cutoffs[0]:
                raise FrequencyRangeError(f"tone {f:g} Hz outside (0, {self.lpf_cutoffs[0]:g})")
            bin_index(f, self.dac.sample_rate, self.n_samples)

    @property
    def sample_rate(self) -> float:
        return self.dac.sample_rate

    @property
    def rf_rate(self) -> float:
        return self.dac.sample_rate * RF_FACTOR

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.n_samples

    def with_comb(self, comb) -> "ChainConfig":
        return replace(self, comb=comb)


class IQ(NamedTuple):
    i: float
    q: float
    amplitude: float
    phase: float


@dataclass(frozen=True, eq=False)
class ChainResult:
    codes: Waveform
    iq: tuple
    spur_report: SpurTable
    saturated: int = 0
    stages: Optional[dict] = None
    comb: Optional[ToneComb] = None


def extract_iq(codes: Waveform, f_tone) -> IQ:
    """Single-bin correlation: ``I + jQ = (2/N) sum x exp(-j w t)``.

    For ``x = A cos(w t + phi)`` this returns ``I = A cos(phi)``,
    ``Q = A sin(phi)``.  ``f_tone`` must sit on a bin centre.
    """
    bin_index(f_tone, codes.sample_rate, codes.n_samples)
    ph = phase_ramp(f_tone, codes.n_samples, codes.sample_rate)
    x = codes.samples
    n = codes.n_samples
    i = 2.0 / n * float(np.dot(x, np.cos(ph)))
    q = -2.0 / n * float(np.dot(x, np.sin(ph)))
    return IQ(i, q, math.hypot(i, q), math.atan2(q, i))


def extract_iq_many(codes: Waveform, freqs) -> list:
    """:func:`extract_iq` for many tones through one FFT."""
    spec = np.fft.rfft(codes.samples)
    n = codes.n_samples
    out = []
    for f in freqs:
        k = bin_index(f, codes.sample_rate, n)
        p = 2.0 * spec[k] / n
        out.append(IQ(float(p.real), float(p.imag), float(abs(p)), float(np.angle(p))))
    return out


def chain_gain(cfg: ChainConfig, f_tone) -> complex:
    """Complex gain from a comb tone (codes) to its bin at the ADC (codes).

    Includes the DAC step, the first-harmonic modulator sideband, the
    feedline, the mixer conversion gain and the interleaved ADC gain at
    ``f_tone``; the phase is the -pi/2 of the upper sideband plus the ADC
    skew term.
    """
    mod = (cfg.modulator.lo_i_amps[0] + cfg.modulator.lo_q_amps[0]) / 2.0
    g = cfg.dac.v_step * mod * 10 ** (cfg.feedline_gain / 20.0) * cfg.mixer.conversion_gain()
    main, _ = image_factors(f_tone, cfg.adc)
    return complex(g * main * np.exp(-0.5j * np.pi) / cfg.adc.v_step)


def _resolve_comb(cfg: ChainConfig) -> ToneComb:
    if cfg.seeds.comb is None or len(cfg.comb) == 0:
        return cfg.comb
    rng = np.random.default_rng(cfg.seeds.comb)
    return cfg.comb.with_phases(rng.uniform(0.0, 2 * np.pi, len(cfg.comb)))


def run_chain(cfg: ChainConfig, spur_threshold_dbm=-90.0) -> ChainResult:
    """Simulate the full chain and extract I/Q for every comb tone.

    Component errors propagate with the stage named in the message;
    :class:`ClippingError` keeps its ``stage`` attribute (``dac-i`` or
    ``dac-q``).
    """
    fs, n = cfg.sample_rate, cfg.n_samples
    comb = _resolve_comb(cfg)
    stages = {} if cfg.retain_stages else None
    codes_i = synthesize_comb(comb, fs, n)
    codes_q = synthesize_comb(comb.with_phases(comb.phases - np.pi / 2), fs, n)

    analog = []
    for name, codes, off in (("i", codes_i, 0), ("q", codes_q, 1)):
        profile = generate_profile(cfg.dac, cfg.seeds.dac_profile + off)
        try:
            v = dac_convert(codes, profile, cfg.dac, seed=cfg.seeds.dac_noise + off)
        except ClippingError as e:
            raise ClippingError(e.index, e.value, e.limit, stage=f"dac-{name}") from None
        v = brickwall_lowpass(upsample(v, RF_FACTOR), cfg.lpf_cutoffs[0])
        analog.append(v)
        if stages is not None:
            stages[f"dac_{name}"] = v
    try:
        rf = modulate(analog[0], analog[1], cfg.modulator, baseband_max=cfg.lpf_cutoffs[0])
    except NyquistError as e:
        raise NyquistError(f"modulator: {e}") from None
    rf = rf * 10 ** (cfg.feedline_gain / 20.0)
    mixer = replace(cfg.mixer, output_cutoff=cfg.lpf_cutoffs[1])
    try:
        bb = demodulate(rf, mixer)
    except NyquistError as e:
        raise NyquistError(f"mixer: {e}") from None
    bb = decimate(bb, RF_FACTOR)
    if stages is not None:
        stages["rf"] = rf
        stages["mixer"] = bb
    adc_profile = generate_profile(cfg.adc, cfg.seeds.adc_profile)
    codes, n_sat = adc_convert_counted(bb, adc_profile, cfg.adc, seed=cfg.seeds.adc_noise)
    iq = tuple(extract_iq_many(codes, comb.frequencies))
    spec = spectrum(codes_to_volts(codes, cfg.adc), "dBm")
    tone_bins = {bin_index(f, fs, n) for f in comb.frequencies}
    rows = [
        (f, p, "tone" if spec.bin_of(f) in tone_bins else "spur")
        for f, p in spec.lines(spur_threshold_dbm)
    ]
    return ChainResult(codes, iq, SpurTable(tuple(rows)), n_sat, stages, comb)


# ---------------------------------------------------------------- line model


def _poly_lines(x: LineSet, coeffs, scale, label, floor) -> LineSet:
    """Lines of ``scale * sum_k c_k x**k`` for k != 1 (k = 1 keeps labels)."""
    out = LineSet.empty()
    for k, c in enumerate(coeffs):
        if c == 0:
            continue
        if k == 0:
            out = out + LineSet.from_lists([0.0], [scale * c], [()], [label])
        elif k == 1:
            out = out + x.scaled(scale * c)
        else:
            out = out + power_lines(x, k, scale * c, label, floor=floor)
    return out


def dac_lines(comb: ToneComb, params: DacParams, phase_shift=0.0, floor=0.0) -> LineSet:
    """DAC output lines (volts) from the smooth INL term; the walk is ignored."""
    tones = LineSet.from_comb(comb, "tone", phase_shift)
    full = 2 ** (params.n_bits - 1)
    x = tones.scaled(1.0 / full)
    out = tones.scaled(params.v_step) + _poly_lines(x, params.smooth_inl_coeffs, params.v_step, "dac nonlinearity", floor)
    return out.fold(params.sample_rate).merged(1e-3)


def modulator_lines(s_i: LineSet, s_q: LineSet, params: ModulatorParams, floor=0.0) -> LineSet:
    out = LineSet.empty()
    for k in range(1, 5):
        f = k * params.lo_frequency
        ai, aq, al = params.lo_i_amps[k - 1], params.lo_q_amps[k - 1], params.lo_feedthrough_amps[k - 1]
        label = None if k == 1 else "modulator"
        if aq:
            lo_q = LineSet.from_lists([f], [aq * np.exp(-0.5j * np.pi)], [()], ["lo"])
            out = out + s_i.product(lo_q, label, floor=floor)
        if ai:
            lo_i = LineSet.from_lists([f], [ai], [()], ["lo"])
            out = out + s_q.product(lo_i, label, floor=floor)
        if al:
            out = out + LineSet.from_lists([f], [al * np.exp(-0.5j * np.pi)], [(ENVIRONMENT,)], ["modulator lo"])
    if params.tone_feedthrough_ratio:
        out = out + s_i.scaled(params.tone_feedthrough_ratio).relabeled("modulator")
    return out.merged(1e-3)


def mixer_chain_lines(rf: LineSet, params: MixerParams, floor=0.0) -> LineSet:
    out = LineSet.empty()
    for m, k, c in params.terms():
        lo = LineSet.from_lists([k * params.lo_frequency], [params.lo_amplitude**k], [()], ["lo"])
        if m == 1 and k == 1:
            out = out + rf.scaled(c).product(lo, None, floor=floor)
        else:
            pm = power_lines(rf, m, c, "mixer imd", floor=2 * floor / params.lo_amplitude**k)
            out = out + pm.product(lo, "mixer imd", floor=floor)
    return out.band(0.0, params.output_cutoff).merged(1e-3)


def adc_output_lines(lines: LineSet, params: AdcParams, floor=0.0) -> LineSet:
    """ADC output (volt-equivalent) lines including the smooth INL term."""
    front = adc_lines(lines, params).merged(1e-3)
    full = 2 ** (params.n_bits - 1) * params.v_step
    x = front.scaled(1.0 / full)
    nl = _poly_lines(x, params.smooth_inl_coeffs, -params.v_step, "adc nonlinearity", floor)
    # the k = 1 term is a gain error on every line: keep the labels
    return (front + nl).fold(params.sample_rate).merged(1e-3)


def chain_lines(cfg: ChainConfig, floor=0.0, comb: Optional[ToneComb] = None) -> LineSet:
    """Predicted ADC-output lines in volts, with tone provenance.

    ``floor`` is an amplitude at the ADC input; each stage prunes products
    that cannot reach it given the linear gain of the stages after it.
    """
    comb = cfg.comb if comb is None else comb
    g_mod = max((a + b) / 2 for a, b in zip(cfg.modulator.lo_i_amps, cfg.modulator.lo_q_amps)) or 1.0
    g_feed = 10 ** (cfg.feedline_gain / 20.0)
    g_mix = abs(cfg.mixer.conversion_gain())
    f_dac = floor / (g_mod * g_feed * g_mix)
    s_i = dac_lines(comb, cfg.dac, 0.0, f_dac).band(0, cfg.lpf_cutoffs[0])
    s_q = dac_lines(comb, cfg.dac, -np.pi / 2, f_dac).band(0, cfg.lpf_cutoffs[0])
    rf = modulator_lines(s_i, s_q, cfg.modulator, floor / (g_feed * g_mix)).scaled(g_feed)
    mixer = replace(cfg.mixer, output_cutoff=cfg.lpf_cutoffs[1])
    bb = mixer_chain_lines(rf, mixer, floor).fold(cfg.sample_rate)
    return adc_output_lines(bb, cfg.adc, floor)


@dataclass(frozen=True)
class CorruptionRow:
    tone_index: int
    tone_hz: float
    spur_hz: float
    spur_origin: str
    spur_power_dbc: float
    iq_error_bound_pct: float


@dataclass(frozen=True)
class CorruptionReport:
    """Colliding spurs per flagged tone.

    ``iq_error_bound_pct`` is a lower bound on the relative I/Q vector
    error of the tone, from the coherent sum of all foreign lines in its
    guard band, reduced by ``model_margin_db``.  ``upper_bounds`` holds the
    matching upper bound for every tone (flagged or not).
    """

    rows: tuple
    n_tones: int
    power_threshold: float
    guard: float
    model_margin_db: float
    upper_bounds: tuple = ()
    lower_bounds: tuple = ()

    @property
    def flagged(self) -> list:
        return sorted({r.tone_index for r in self.rows})

    @property
    def n_flagged(self) -> int:
        return len(self.flagged)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tone_index", "tone_hz", "spur_hz", "spur_origin", "spur_power_dbc", "iq_error_bound_pct"])
        for r in self.rows:
            writer.writerow([
                r.tone_index, f"{r.tone_hz:.3f}", f"{r.spur_hz:.3f}", r.spur_origin,
                f"{r.spur_power_dbc:.6f}", f"{r.iq_error_bound_pct:.6f}",
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


MODEL_MARGIN_DB = 1.0


def corrupted_channels(cfg: ChainConfig, power_threshold=-80.0, guard=None, model_margin_db=MODEL_MARGIN_DB,
                       prune_db=30.0) -> CorruptionReport:
    """Flag tones whose bin holds spur power at or above ``power_threshold`` dBc.

    A line belongs to tone i when it derives from tone i, possibly mixed
    with comb-independent sources (LO feedthrough, offsets, crosstalk),
    since such a line only rescales the tone.  Every other line is
    foreign, including the comb-independent lines themselves.  All
    foreign lines closer than ``guard`` (default one bin) add coherently;
    the tone is flagged when their sum reaches the threshold relative to
    the tone's own line.  Products weaker than ``prune_db`` below the
    threshold are not enumerated.
    """
    guard = cfg.bin_width if guard is None else guard
    comb = _resolve_comb(cfg)
    if len(comb) == 0:
        return CorruptionReport((), 0, power_threshold, guard, model_margin_db)
    gains = [abs(chain_gain(cfg, f)) * cfg.adc.v_step for f in comb.frequencies]
    victim_min = min(a * g for a, g in zip(comb.amplitudes, gains))
    floor = victim_min * 10 ** ((power_threshold - prune_db) / 20.0)
    lines = chain_lines(cfg, floor, comb)
    margin = 10 ** (model_margin_db / 20.0)
    rows, uppers, lowers = [], [], []
    for i, f in enumerate(comb.frequencies):
        near = lines.take(np.abs(lines.freq - f) < guard)
        own = np.array([i in p and p <= {i, ENVIRONMENT} for p in near.prov], dtype=bool)
        victim = abs(near.phasor[own].sum()) if own.any() else 0.0
        foreign = near.take(~own)
        total = abs(foreign.phasor.sum()) if len(foreign) else 0.0
        if victim == 0:
            uppers.append(math.inf)
            lowers.append(0.0)
            continue
        ratio = total / victim
        uppers.append(ratio * margin)
        lowers.append(ratio / margin)
        if ratio == 0 or 20 * math.log10(ratio) < power_threshold:
            continue
        order = np.argsort(-foreign.amplitude)
        for j in order:
            rows.append(CorruptionRow(
                i, float(f), float(foreign.freq[j]), str(foreign.label[j]),
                20 * math.log10(foreign.amplitude[j] / victim), 100.0 * ratio / margin,
            ))
    return CorruptionReport(tuple(rows), len(comb), power_threshold, guard, model_margin_db,
                            tuple(uppers), tuple(lowers))
