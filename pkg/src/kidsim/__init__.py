"""Behavioral simulator of a frequency-multiplexed detector readout chain."""

__version__ = "0.1.0"

from .adc import AdcParams, adc_convert
from .chain import ChainConfig, ChainSeeds, corrupted_channels, extract_iq, run_chain
from .config import dump_config, load_config, parse_config
from .dac import DacParams, dac_convert, generate_profile, multiplex_limit
from .errors import ClippingError, ConfigError, FitError, FrequencyRangeError, KidSimError, NyquistError
from .mixer import MixerParams, demodulate, fit_mixer, predict_imds
from .modulator import ModulatorParams, fit_params, modulate
from .signal import Tone, ToneComb, Waveform, noise_floor, spectrum, synthesize_comb
from .spurs import SpurRow, SpurTable
