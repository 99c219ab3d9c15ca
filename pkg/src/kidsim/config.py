"""
YAML configuration for the command-line tools.

A document has one optional section per component plus ``chain`` and
``experiment``::

    comb:
      frequencies: [100.0e6, 250.0e6]
      amplitudes: 1024        # scalar or one per tone
      phases: [0.0, 1.0]      # optional
      unit: code
    dac: {n_bits: 16, noise_density: -163.0}
    modulator: {lo_frequency: 1.2e9}
    mixer: {nl_coeffs: [[2.0, 0.0356, 0, 0], [0, 0, 0.1, 0.16]]}
    adc: {gain_core2: 0.9995}
    chain: {feedline_gain: 0.0, seeds: {dac_profile: 1}}
    experiment: {tone_frequency: 340.0e6, tone_amplitude: 0.398}

Missing keys take the component defaults; unknown keys are rejected.
Plain exponent literals such as ``1e9`` are read as floats.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from typing import Optional

import yaml

from .adc import AdcParams
from .chain import ChainConfig, ChainSeeds
from .dac import DacParams, MULTIPLEX_RECORD_LEN
from .errors import ConfigError
from .mixer import MixerParams
from .modulator import ModulatorParams
from .signal import ToneComb


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 only accepts floats with a dot and a signed exponent.
_FLOAT = re.compile(
    r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""",
    re.X,
)
_Loader.yaml_implicit_resolvers = {
    k: [(tag, rx) for tag, rx in v if tag != "tag:yaml.org,2002:float"]
    for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()
}
_Loader.add_implicit_resolver("tag:yaml.org,2002:float", _FLOAT, list("-+0123456789."))


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for single experiments; ``None`` means the subcommand default."""

    tone_frequency: Optional[float] = None
    tone_amplitude: Optional[float] = None
    n_samples: Optional[int] = None
    bits_per_tone: int = 10
    n_tones: tuple = ()  # multiplex sweep, empty = default sweep
    runs: int = 50
    record_len: int = MULTIPLEX_RECORD_LEN
    fixture: Optional[str] = None
    power_threshold: float = -80.0  # dBc, corruption flag level
    guard: Optional[float] = None  # Hz, None = one bin
    spur_threshold: Optional[float] = None  # dBm for lines.csv, None = per subcommand

    def __post_init__(self):
        object.__setattr__(self, "n_tones", tuple(int(n) for n in self.n_tones))
        if int(self.bits_per_tone) != self.bits_per_tone or self.bits_per_tone < 1:
            raise ValueError("bits_per_tone must be a positive integer")
        if int(self.runs) != self.runs or self.runs < 1:
            raise ValueError("runs must be a positive integer")
        if int(self.record_len) != self.record_len or self.record_len < 2:
            raise ValueError("record_len must be an integer >= 2")
        if self.n_samples is not None and (int(self.n_samples) != self.n_samples or self.n_samples < 2):
            raise ValueError("n_samples must be an integer >= 2")
        if any(n < 0 for n in self.n_tones):
            raise ValueError("n_tones entries must be >= 0")
        if self.guard is not None and self.guard < 0:
            raise ValueError("guard must be >= 0")


@dataclass(frozen=True)
class Config:
    chain: ChainConfig
    experiment: ExperimentConfig = ExperimentConfig()

    @property
    def comb(self) -> ToneComb:
        return self.chain.comb


SECTIONS = ("comb", "dac", "modulator", "mixer", "adc", "chain", "experiment")
_COMPONENTS = {"dac": DacParams, "modulator": ModulatorParams, "mixer": MixerParams, "adc": AdcParams}
_CHAIN_KEYS = ("feedline_gain", "lpf_cutoffs", "n_samples", "seeds")
_COMB_KEYS = ("frequencies", "amplitudes", "phases", "unit")


def _require_mapping(value, path):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a mapping")
    return value


def _check_keys(data, allowed, path):
    for key in data:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, "unknown key")


def _build(cls, data, path, fixed_path=None, **fixed):
    """Construct ``cls`` from ``data``; a failure names the offending key.

    When the ``fixed`` arguments fail on their own the error names
    ``fixed_path``.
    """
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(data, [n for n in names if n not in fixed], path)
    try:
        return cls(**fixed, **data)
    except (ValueError, TypeError) as exc:
        if fixed:
            try:
                cls(**fixed)
            except (ValueError, TypeError) as alone:
                raise ConfigError(fixed_path or path, str(alone)) from None
        for key in data:
            try:
                cls(**fixed, **{key: data[key]})
            except (ValueError, TypeError) as single:
                raise ConfigError(f"{path}.{key}", str(single)) from None
        raise ConfigError(path, str(exc)) from None


def _parse_comb(data) -> ToneComb:
    _check_keys(data, _COMB_KEYS, "comb")
    freqs = data.get("frequencies", [])
    if not isinstance(freqs, list):
        raise ConfigError("comb.frequencies", "expected a list")
    amps = data.get("amplitudes", 0.0)
    if isinstance(amps, list) and len(amps) != len(freqs):
        raise ConfigError("comb.amplitudes", "needs one entry per frequency")
    phases = data.get("phases")
    if phases is not None and (not isinstance(phases, list) or len(phases) != len(freqs)):
        raise ConfigError("comb.phases", "needs one entry per frequency")
    try:
        return ToneComb.from_frequencies(freqs, amps, phases, data.get("unit", "code"))
    except (ValueError, TypeError) as exc:
        raise ConfigError("comb", str(exc)) from None


def from_dict(doc) -> Config:
    """Validated :class:`Config` from a parsed document (a dict or None)."""
    doc = _require_mapping(doc, "")
    _check_keys(doc, SECTIONS, "")
    sec = {name: _require_mapping(doc.get(name), name) for name in SECTIONS}
    comb = _parse_comb(sec["comb"])
    parts = {name: _build(cls, sec[name], name) for name, cls in _COMPONENTS.items()}

    chain = dict(sec["chain"])
    _check_keys(chain, _CHAIN_KEYS, "chain")
    seeds = _build(ChainSeeds, _require_mapping(chain.pop("seeds", None), "chain.seeds"), "chain.seeds")
    chain_cfg = _build(ChainConfig, chain, "chain", "comb", comb=comb, seeds=seeds, **parts)
    experiment = _build(ExperimentConfig, sec["experiment"], "experiment")
    return Config(chain_cfg, experiment)


def parse_config(text: str) -> Config:
    """Parse a YAML document; an empty document gives the default config."""
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed YAML: {exc}") from None
    return from_dict(doc)


def load_config(path) -> Config:
    with open(path) as fh:
        return parse_config(fh.read())


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg: Config) -> dict:
    """Plain nested dict holding every setting (inverse of :func:`from_dict`)."""
    ch = cfg.chain
    comb = ch.comb
    out = {
        "comb": {
            "frequencies": [float(f) for f in comb.frequencies],
            "amplitudes": [float(a) for a in comb.amplitudes],
            "phases": [float(p) for p in comb.phases],
            "unit": comb.amplitude_unit,
        }
    }
    for name in _COMPONENTS:
        params = getattr(ch, name)
        out[name] = {f.name: _plain(getattr(params, f.name)) for f in dataclasses.fields(params)}
    out["chain"] = {
        "feedline_gain": float(ch.feedline_gain),
        "lpf_cutoffs": [float(c) for c in ch.lpf_cutoffs],
        "n_samples": int(ch.n_samples),
        "seeds": dataclasses.asdict(ch.seeds),
    }
    out["experiment"] = {
        f.name: _plain(getattr(cfg.experiment, f.name)) for f in dataclasses.fields(cfg.experiment)
    }
    return out


def dump_config(cfg: Config) -> str:
    """YAML text that :func:`parse_config` reads back to an equal config."""
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)
