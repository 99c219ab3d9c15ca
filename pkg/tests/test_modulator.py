import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kidsim.errors import FitError, NyquistError
from kidsim.experiments import modulator_tone
from kidsim.modulator import (
    ModulatorParams,
    expected_lines,
    fit_params,
    load_fixture,
    modulate,
    predict_table,
    sideband_amplitudes,
)
from kidsim.signal import sine, to_dbm
from kidsim.spurs import SpurTable

FS = 12e9
N = 150_000  # 80 kHz bins
F_LO = 1.2e9


def sim(params, f=850e6, a=0.25):
    return modulator_tone(f, a, params, FS, N)


def table_from(spec, threshold=-150.0):
    return SpurTable(tuple((f, p, "sim") for f, p in spec.lines(threshold)))


@pytest.fixture(scope="module")
def fitted_spec():
    return sim(ModulatorParams())


class TestParams:
    def test_defaults(self):
        p = ModulatorParams()
        assert p.lo_frequency == 1.2e9 and p.tone_feedthrough_ratio == 0.0112
        assert len(p.lo_i_amps) == len(p.lo_q_amps) == len(p.lo_feedthrough_amps) == 4

    @pytest.mark.parametrize(
        "kw", [dict(lo_frequency=0), dict(lo_i_amps=(1, 0, 0)), dict(lo_q_amps=(-1, 0, 0, 0)), dict(tone_feedthrough_ratio=-1)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ModulatorParams(**kw)


class TestModulate:
    def test_balanced_upper_only(self):
        spec = sim(ModulatorParams.balanced())
        up = spec.level(F_LO + 850e6)
        assert up == pytest.approx(to_dbm(0.25), abs=1e-9)
        assert spec.level(F_LO - 850e6) - up < -250

    def test_algorithm_samplewise(self):
        p = ModulatorParams()
        n = 1200
        t = np.arange(n) / FS
        f = 850e6
        si, sq = sine(f, 0.25, FS, n), sine(f, 0.25, FS, n, phase=-np.pi / 2)
        lo_i = sum(a * np.cos(2 * np.pi * (k + 1) * F_LO * t) for k, a in enumerate(p.lo_i_amps))
        lo_q = sum(a * np.sin(2 * np.pi * (k + 1) * F_LO * t) for k, a in enumerate(p.lo_q_amps))
        ft = sum(a * np.sin(2 * np.pi * (k + 1) * F_LO * t) for k, a in enumerate(p.lo_feedthrough_amps))
        ref = si.samples * lo_q + sq.samples * lo_i + 0.0112 * si.samples + ft
        assert np.allclose(modulate(si, sq, p).samples, ref, atol=1e-9)

    def test_fixture_850(self, fitted_spec):
        for row in load_fixture("modulator_850mhz"):
            assert fitted_spec.level(row.frequency) == pytest.approx(row.power_dbm, abs=1.0)

    def test_fixture_90_known_deltas(self):
        spec = sim(ModulatorParams(), 90e6)
        fx = load_fixture("modulator_90mhz")
        deltas = {r.frequency: spec.level(r.frequency) - r.power_dbm for r in fx}
        assert deltas[1110e6] == pytest.approx(20.0, abs=1.0)
        assert deltas[3690e6] == pytest.approx(12.0, abs=1.0)
        others = [abs(d) for f, d in deltas.items() if f not in (1110e6, 3690e6)]
        assert max(others) < 1.0

    @given(st.floats(0.0, 0.05))
    def test_tone_feedthrough(self, ratio):
        p = ModulatorParams(tone_feedthrough_ratio=0.0112)
        spec = sim(p, a=0.1 + ratio)
        rel = spec.level(850e6) - to_dbm(0.1 + ratio)
        assert rel == pytest.approx(20 * math.log10(0.0112), abs=0.05)
        assert 20 * math.log10(0.0112) == pytest.approx(-39.02, abs=0.005)

    def test_nyquist(self):
        w = sine(850e6, 0.25, 8e9, 8000)
        with pytest.raises(NyquistError, match="harmonic 3"):
            modulate(w, w, ModulatorParams())

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            modulate(sine(1e6, 1, FS, 100), sine(1e6, 1, FS, 120), ModulatorParams())

    @given(st.floats(0.01, 2.0))
    def test_linear_in_baseband(self, g):
        p = ModulatorParams()
        a = sim(p, a=0.25)
        b = sim(p, a=0.25 * g)
        shift = 20 * math.log10(g)
        for f, amp, lab in expected_lines(p, 850e6, 0.25):
            if lab.endswith("LO"):
                assert b.level(f) == pytest.approx(a.level(f), abs=1e-6)
            else:
                assert b.level(f) - a.level(f) == pytest.approx(shift, abs=1e-6)

    def test_frequency_completeness(self, fitted_spec):
        want = {round(f) for f, _, _ in expected_lines(ModulatorParams(), 850e6, 0.25)}
        got = {round(f) for f, _ in fitted_spec.lines(-100.0)}
        assert got == want


class TestSidebands:
    def test_balanced(self):
        p = ModulatorParams(F_LO, (1, 0, 0, 0), (1, 0, 0, 0), (0, 0, 0, 0), 0)
        assert sideband_amplitudes(p, 0.3)[0] == pytest.approx((0.3, 0.0))

    def test_single_mixer(self):
        p = ModulatorParams(F_LO, (1, 0, 0, 0), (0, 0, 0, 0), (0, 0, 0, 0), 0)
        assert sideband_amplitudes(p, 0.3)[0] == pytest.approx((0.15, 0.15))

    def test_prediction_matches_simulation(self, fitted_spec):
        for r in predict_table(ModulatorParams(), 850e6, 0.25):
            assert fitted_spec.level(r.frequency) == pytest.approx(r.power_dbm, abs=0.1)


class TestFit:
    def test_round_trip(self, fitted_spec):
        p = ModulatorParams()
        q = fit_params(table_from(fitted_spec), F_LO, 850e6, 0.25)
        got = np.array(q.lo_i_amps + q.lo_q_amps + q.lo_feedthrough_amps + (q.tone_feedthrough_ratio,))
        want = np.array(p.lo_i_amps + p.lo_q_amps + p.lo_feedthrough_amps + (p.tone_feedthrough_ratio,))
        assert np.allclose(got, want, rtol=0.01)

    @given(
        st.lists(st.floats(0.05, 1.0), min_size=4, max_size=4),
        st.lists(st.floats(0.0, 0.99), min_size=4, max_size=4),
    )
    def test_round_trip_random(self, a_i, frac):
        a_q = [ai * fr for ai, fr in zip(a_i, frac)]
        p = ModulatorParams(F_LO, a_i, a_q, (0.01, 0.02, 0.03, 0.04), 0.0112)
        q = fit_params(predict_table(p, 850e6, 0.25), F_LO, 850e6, 0.25)
        assert np.allclose(q.lo_i_amps, a_i, rtol=1e-6, atol=1e-9)
        assert np.allclose(q.lo_q_amps, a_q, rtol=1e-6, atol=1e-6)

    def test_idempotent(self, fitted_spec):
        q1 = fit_params(table_from(fitted_spec), F_LO, 850e6, 0.25)
        q2 = fit_params(table_from(sim(q1)), F_LO, 850e6, 0.25)
        assert np.allclose(q1.lo_i_amps + q1.lo_q_amps, q2.lo_i_amps + q2.lo_q_amps, rtol=0.01)

    def test_zero_lower_sidebands(self):
        rows = [(n * F_LO + 850e6, -10.0, "u") for n in range(1, 5)]
        rows += [(abs(n * F_LO - 850e6), -400.0, "l") for n in range(1, 5)]
        rows += [(n * F_LO, -30.0, "lo") for n in range(1, 5)] + [(850e6, -50.0, "t")]
        q = fit_params(SpurTable(tuple(rows)), F_LO, 850e6, 0.25)
        assert np.allclose(q.lo_i_amps, q.lo_q_amps, rtol=1e-6)

    def test_fixture_fit_resimulates(self):
        fx = load_fixture("modulator_850mhz")
        q = fit_params(fx, F_LO, 850e6, 0.25)
        spec = sim(q)
        for r in fx:
            assert spec.level(r.frequency) == pytest.approx(r.power_dbm, abs=1.0)

    def test_missing_line(self):
        fx = load_fixture("modulator_850mhz")
        rows = tuple(r for r in fx if r.frequency != 2750e6)
        with pytest.raises(FitError, match="3LO-tone"):
            fit_params(SpurTable(rows), F_LO, 850e6, 0.25)

    def test_lower_exceeds_upper(self):
        fx = load_fixture("modulator_850mhz")
        rows = tuple((r.frequency, 0.0 if r.frequency == 350e6 else r.power_dbm, r.origin) for r in fx)
        with pytest.raises(FitError, match="lower sideband"):
            fit_params(SpurTable(rows), F_LO, 850e6, 0.25)
