"""
Command-line front end.

Every subcommand takes ``--config``, ``--seed`` and ``--out`` and writes
into the output directory (``--out``, else ``$KIDSIM_OUT``, else
``./kidsim-out``):

* the component CSV (``lines.csv``, ``spectrum.csv``, ...),
* ``summary.txt`` with the key results as ``key=value`` lines,
* ``manifest.json`` describing the run.

Exit codes: 0 success, 2 configuration error, 3 clipping, 4 Nyquist
violation, 5 fitting failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .chain import ChainSeeds, corrupted_channels, run_chain
from .config import Config, ExperimentConfig, dump_config, load_config, parse_config
from .dac import multiplex_limit
from .errors import ClippingError, ConfigError, FitError, KidSimError, NyquistError
from .experiments import adc_tone, dac_tone, lines_below, mixer_tone, modulator_tone
from .mixer import fit_mixer, predict_imds
from .modulator import ModulatorParams, fit_params, predict_table
from .signal import coherent_frequency, spectrum, to_dbm
from .spurs import SpurTable

OUT_ENV = "KIDSIM_OUT"
DEFAULT_OUT = "kidsim-out"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CLIPPING = 3
EXIT_NYQUIST = 4
EXIT_FIT = 5

NOISELESS_THRESHOLD = -120.0  # dBm, listing threshold without a noise floor
FLOOR_CLEARANCE = 20.0  # dB above the per-bin noise floor for noisy spectra

DEFAULT_SWEEP = {9: range(1400, 2001, 50), 10: range(300, 501, 20)}


class Run:
    """Output directory plus the summary and manifest of one invocation."""

    def __init__(self, command, args, cfg: Config):
        self.command = command
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        self.summary = {}
        self.files = []
        self.t0 = time.perf_counter()

    def write(self, name, text):
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / name, "w", newline="") as fh:
            fh.write(text)
        self.files.append(name)

    def put(self, key, value):
        if isinstance(value, float):
            value = "nan" if math.isnan(value) else f"{value:.6f}"
        self.summary[key] = "none" if value is None else value

    def finish(self):
        self.write("summary.txt", "".join(f"{k}={v}\n" for k, v in self.summary.items()))
        manifest = {
            "command": self.command,
            "config": self.args.config,
            "seed": self.args.seed,
            "seeds": asdict(self.cfg.chain.seeds),
            "out": str(self.out),
            "version": __version__,
            "files": self.files,
            "duration_s": round(time.perf_counter() - self.t0, 3),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


def _load(args) -> Config:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        s = int(args.seed)
        seeds = ChainSeeds(cfg.chain.seeds.comb, s + 1, s + 2, s + 3, s + 4)
        cfg = replace(cfg, chain=replace(cfg.chain, seeds=seeds))
    return cfg


def _pick(flag, configured, default):
    if flag is not None:
        return flag
    return default if configured is None else configured


def _listing_threshold(ex, res=None):
    if ex.spur_threshold is not None:
        return ex.spur_threshold
    if res is None:
        return NOISELESS_THRESHOLD
    carrier_dbm = res.dbm.level(res.frequency)
    return carrier_dbm + res.noise_floor_dbc + FLOOR_CLEARANCE


def _spectrum_csv(spec, f_max=None) -> str:
    freqs = spec.frequencies
    db = spec.power_db
    keep = slice(None) if f_max is None else freqs <= f_max
    rows = ["frequency_hz,power_db,reference\n"]
    rows += [f"{f:.6f},{p:.6f},{spec.reference}\n" for f, p in zip(freqs[keep], db[keep])]
    return "".join(rows)


def _table(path_or_name, loader) -> SpurTable:
    if path_or_name is None:
        return loader()
    if os.path.exists(path_or_name):
        return SpurTable.from_csv(path_or_name)
    return loader(path_or_name)


def _fixture_deltas(run: Run, fixture: SpurTable, spec):
    """Write ``comparison.csv`` (fixture vs simulation) and the worst delta."""
    rows = ["frequency_hz,fixture_dbm,simulated_dbm,delta_db\n"]
    worst = 0.0
    for r in fixture.sorted():
        sim = spec.level(r.frequency)
        delta = sim - r.power_dbm
        worst = max(worst, abs(delta))
        rows.append(f"{r.frequency:.3f},{r.power_dbm:.6f},{sim:.6f},{delta:.6f}\n")
    run.write("comparison.csv", "".join(rows))
    run.put("fixture_max_abs_delta_db", worst)


def cmd_sim_dac(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    p = cfg.chain.dac
    n = ex.n_samples or cfg.chain.n_samples
    f = coherent_frequency(_pick(a.tone, ex.tone_frequency, 150e6), p.sample_rate, n)
    amp = _pick(a.amplitude, ex.tone_amplitude, None)
    seeds = cfg.chain.seeds
    res = dac_tone(f, amp, p, n, seeds.dac_profile, seeds.dac_noise)
    run.write("spectrum.csv", _spectrum_csv(res.dbc))
    run.write("lines.csv", res.lines(_listing_threshold(ex, res)).to_csv())
    run.put("tone_hz", f)
    run.put("noise_floor_dbc", res.noise_floor_dbc)
    for h, lvl in res.harmonics.items():
        run.put(f"hd{h}_dbc", lvl)
    run.put("sfdr_dbc", res.sfdr_dbc)


def cmd_sim_adc(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    p = cfg.chain.adc
    n = ex.n_samples or cfg.chain.n_samples
    f = coherent_frequency(_pick(a.tone, ex.tone_frequency, 340e6), p.sample_rate, n)
    amp = _pick(a.amplitude, ex.tone_amplitude, None)
    seeds = cfg.chain.seeds
    res = adc_tone(f, amp, p, n, seeds.adc_profile, seeds.adc_noise)
    run.write("spectrum.csv", _spectrum_csv(res.dbm))
    run.write("lines.csv", res.lines(_listing_threshold(ex, res)).to_csv())
    run.put("tone_hz", f)
    run.put("tone_dbm", res.dbm.level(f))
    run.put("noise_floor_dbc", res.noise_floor_dbc)
    for h, lvl in res.harmonics.items():
        run.put(f"hd{h}_dbc", lvl)
    run.put("sfdr_dbc", res.sfdr_dbc)
    run.put("saturated_samples", res.saturated)


def cmd_sim_modulator(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    p = cfg.chain.modulator
    f = _pick(a.tone, ex.tone_frequency, 850e6)
    amp = _pick(a.amplitude, ex.tone_amplitude, 0.25)
    n = ex.n_samples or cfg.chain.n_samples * 6
    spec = modulator_tone(f, amp, p, cfg.chain.rf_rate, n)
    run.write("lines.csv", lines_below(spec, _listing_threshold(ex)).to_csv())
    run.write("predicted.csv", predict_table(p, f, amp).sorted().to_csv())
    if a.spectrum:
        run.write("spectrum.csv", _spectrum_csv(spec))
    fixture = a.fixture or ex.fixture
    if fixture:
        from .modulator import load_fixture

        _fixture_deltas(run, _table(fixture, load_fixture), spec)
    up = spec.level(p.lo_frequency + f)
    run.put("tone_hz", f)
    run.put("upper_sideband_dbm", up)
    run.put("lower_sideband_dbc", spec.level(abs(p.lo_frequency - f)) - up)
    run.put("tone_feedthrough_dbc", spec.level(f) - to_dbm(amp))


def cmd_sim_mixer(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    p = cfg.chain.mixer
    f = _pick(a.tone, ex.tone_frequency, 2070e6)
    amp = _pick(a.amplitude, ex.tone_amplitude, 0.1)
    n = ex.n_samples or cfg.chain.n_samples * 6
    spec = mixer_tone(f, amp, p, cfg.chain.rf_rate, n)
    sim = lines_below(spec, _listing_threshold(ex), p.output_cutoff)
    run.write("lines.csv", sim.to_csv())
    run.write("spectrum.csv", _spectrum_csv(spec, p.output_cutoff))
    pred = predict_imds([f], p, band=(0.0, p.output_cutoff), rf_amplitude=amp)
    run.write("predicted.csv", pred.sorted().to_csv())
    fixture = a.fixture or ex.fixture
    if fixture:
        from .mixer import load_fixture

        _fixture_deltas(run, _table(fixture, load_fixture), spec)
    run.put("rf_hz", f)
    run.put("n_lines", len(sim))
    run.put("demodulated_dbm", spec.level(abs(f - p.lo_frequency)))


def cmd_sim_chain(run: Run):
    cfg, ex = run.cfg, run.cfg.experiment
    kw = {} if ex.spur_threshold is None else {"spur_threshold_dbm": ex.spur_threshold}
    res = run_chain(cfg.chain, **kw)
    rows = ["tone_index,tone_hz,i,q,amplitude,phase\n"]
    for k, (t, iq) in enumerate(zip(res.comb, res.iq)):
        rows.append(f"{k},{t.frequency:.3f},{iq.i:.9f},{iq.q:.9f},{iq.amplitude:.9f},{iq.phase:.9f}\n")
    run.write("iq.csv", "".join(rows))
    run.write("lines.csv", res.spur_report.to_csv())
    spec = spectrum(res.codes, "dBFS", fullscale=2 ** (cfg.chain.adc.n_bits - 1))
    run.write("spectrum.csv", _spectrum_csv(spec))
    run.put("n_tones", len(res.iq))
    run.put("saturated_samples", res.saturated)
    run.put("n_spur_lines", len(res.spur_report))


def cmd_predict_spurs(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    threshold = _pick(a.threshold, None, ex.power_threshold)
    guard = _pick(a.guard, ex.guard, None)
    rep = corrupted_channels(cfg.chain, threshold, guard)
    run.write("corruption.csv", rep.to_csv())
    run.put("n_tones", rep.n_tones)
    run.put("n_flagged", rep.n_flagged)
    run.put("flagged", " ".join(str(i) for i in rep.flagged) or "none")
    run.put("power_threshold_dbc", float(threshold))
    run.put("guard_hz", float(rep.guard))


def cmd_multiplex_limit(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    bits = _pick(a.bits, None, ex.bits_per_tone)
    runs = _pick(a.runs, None, ex.runs)
    if a.sweep:
        start, stop, step = a.sweep
        sweep = range(start, stop + 1, step)
    elif ex.n_tones:
        sweep = ex.n_tones
    else:
        sweep = DEFAULT_SWEEP.get(bits, range(100, 2001, 100))
    seed = 0 if a.seed is None else a.seed
    rep = multiplex_limit(bits, sweep, runs, ex.record_len, seed, cfg.chain.dac,
                          slew_max=cfg.chain.dac.slew_max)
    run.write("curve.csv", rep.to_csv())
    run.put("bits_per_tone", bits)
    run.put("runs", runs)
    run.put("record_len", rep.record_len)
    run.put("crossing", rep.crossing)
    ic = rep.interpolated_crossing
    run.put("interpolated_crossing", None if ic is None else float(ic))
    run.put("max_mean_slew_v_per_s", float(rep.mean_max_slew.max()))
    if rep.slew_max is not None:
        run.put("slew_crossing", rep.slew_crossing)


def _fitted_config(chain) -> str:
    return dump_config(Config(chain, ExperimentConfig()))


def cmd_fit_modulator(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    from .modulator import load_fixture

    table = _table(a.table or ex.fixture or "modulator_850mhz", load_fixture)
    f = _pick(a.tone, ex.tone_frequency, 850e6)
    amp = _pick(a.amplitude, ex.tone_amplitude, 0.25)
    p: ModulatorParams = fit_params(table, cfg.chain.modulator.lo_frequency, f, amp)
    run.write("lines.csv", predict_table(p, f, amp).sorted().to_csv())
    chain = replace(cfg.chain, modulator=p)
    run.write("fitted.yaml", _fitted_config(chain))
    for k in range(4):
        run.put(f"lo_i_{k + 1}", p.lo_i_amps[k])
        run.put(f"lo_q_{k + 1}", p.lo_q_amps[k])
        run.put(f"lo_feedthrough_{k + 1}", p.lo_feedthrough_amps[k])
    run.put("tone_feedthrough_ratio", p.tone_feedthrough_ratio)


def cmd_fit_mixer(run: Run):
    cfg, ex, a = run.cfg, run.cfg.experiment, run.args
    from .mixer import load_fixture

    table = _table(a.table or ex.fixture or "mixer_870mhz", load_fixture)
    f = _pick(a.tone, ex.tone_frequency, 2070e6)
    amp = _pick(a.amplitude, ex.tone_amplitude, 0.1)
    m = cfg.chain.mixer
    p = fit_mixer(table, f, m.lo_frequency, amp, m.lo_amplitude, m.output_cutoff)
    pred = predict_imds([f], p, band=(0.0, p.output_cutoff), rf_amplitude=amp)
    run.write("lines.csv", pred.sorted().to_csv())
    run.write("fitted.yaml", _fitted_config(replace(cfg.chain, mixer=p)))
    for mi, row in enumerate(p.nl_coeffs, start=1):
        for ni, c in enumerate(row, start=1):
            run.put(f"c_{mi}_{ni}", float(c))


COMMANDS = {
    "sim-dac": (cmd_sim_dac, "single-tone DAC spectrum, harmonics and noise floor"),
    "sim-modulator": (cmd_sim_modulator, "single-tone modulator output lines"),
    "sim-mixer": (cmd_sim_mixer, "single RF tone through the mixer"),
    "sim-adc": (cmd_sim_adc, "single-tone ADC spectrum with interleaving spurs"),
    "sim-chain": (cmd_sim_chain, "full chain for the configured comb, per-tone I/Q"),
    "predict-spurs": (cmd_predict_spurs, "corrupted-channel report for the configured comb"),
    "multiplex-limit": (cmd_multiplex_limit, "peak code versus tone count"),
    "fit-modulator": (cmd_fit_modulator, "fit modulator parameters to a line table"),
    "fit-mixer": (cmd_fit_mixer, "fit mixer coefficients to a line table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kidsim", description="Readout-electronics simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, help="base seed for every random stage")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        if name in ("sim-dac", "sim-adc", "sim-modulator", "sim-mixer", "fit-modulator", "fit-mixer"):
            p.add_argument("--tone", type=float, help="tone (or RF) frequency in Hz")
            p.add_argument("--amplitude", type=float, help="tone amplitude (codes for the DAC, else volts)")
        if name in ("sim-modulator", "sim-mixer"):
            p.add_argument("--fixture", help="reference line table (packaged name or CSV path)")
        if name == "sim-modulator":
            p.add_argument("--spectrum", action="store_true", help="also write the full RF spectrum")
        if name in ("fit-modulator", "fit-mixer"):
            p.add_argument("--table", help="line table to fit (packaged name or CSV path)")
        if name == "predict-spurs":
            p.add_argument("--threshold", type=float, help="flag level in dBc")
            p.add_argument("--guard", type=float, help="collision guard in Hz")
        if name == "multiplex-limit":
            p.add_argument("--bits", type=int, help="bits per tone")
            p.add_argument("--runs", type=int, help="random-phase runs per point")
            p.add_argument("--sweep", type=int, nargs=3, metavar=("START", "STOP", "STEP"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        run = Run(args.command, args, cfg)
        COMMANDS[args.command][0](run)
        run.finish()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ClippingError as e:
        print(json.dumps({"error": "clipping", "stage": e.stage, **e.as_dict()}), file=sys.stderr)
        return EXIT_CLIPPING
    except NyquistError as e:
        print(f"nyquist error: {e}", file=sys.stderr)
        return EXIT_NYQUIST
    except FitError as e:
        print(f"fit error: {e}", file=sys.stderr)
        return EXIT_FIT
    except (KidSimError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
