import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastnose.errors import ScheduleError
from fastnose.olfactometer import (
    CARRIER_VALVES,
    SHATTER_MS,
    SUBTICKS_PER_WINDOW,
    StimulusSpec,
    TransportParams,
    VALVE_MANIFOLD,
    build_schedule,
    fidelity,
    transport,
    transport_subtick,
)


def spec_single(odour="IA", duration=1000.0, conc=1.0, onset=100.0):
    return StimulusSpec(
        odours=(odour,), pulse_duration_ms=duration, concentration=conc,
        onset_time_ms=onset,
    )


def spec_train(mode, freq, odours=("IA", "EB"), onset=100.0, conc=1.0):
    return StimulusSpec(
        odours=odours, pulse_duration_ms=1000.0, concentration=conc,
        modulation_frequency_hz=freq, correlation_mode=mode, onset_time_ms=onset,
    )


class TestStimulusSpec:
    def test_anti_requires_two_odours(self):
        with pytest.raises(ScheduleError):
            StimulusSpec(
                odours=("IA",), pulse_duration_ms=1000, concentration=1.0,
                modulation_frequency_hz=20, correlation_mode="anti-correlated",
            ).validate()

    def test_pulse_shorter_than_shatter_period_rejected(self):
        with pytest.raises(ScheduleError, match="shattering"):
            spec_single(duration=1.0).validate()

    def test_bad_frequency_rejected(self):
        with pytest.raises(ScheduleError):
            spec_train("correlated", 13.0).validate()

    def test_bad_concentration_rejected(self):
        with pytest.raises(ScheduleError):
            spec_single(conc=0.5).validate()


class TestBuildSchedule:
    def test_anti_correlated_half_cycle_shift(self):
        # 20 Hz anti: IA open on [0,25), [50,75)...; EB on [25,50), [75,100)...
        sch = build_schedule(spec_train("anti-correlated", 20.0, onset=0.0), total_ms=1000)
        ia = sch.valve_duty_1khz(sch.odour_valves["IA"])
        eb = sch.valve_duty_1khz(sch.odour_valves["EB"])
        assert np.all(ia[0:25] == 1.0) and np.all(ia[25:50] == 0.0)
        assert np.all(eb[0:25] == 0.0) and np.all(eb[25:50] == 1.0)
        assert np.all(ia[50:75] == 1.0) and np.all(eb[75:100] == 1.0)

    def test_correlated_shares_windows_60hz(self):
        sch = build_schedule(spec_train("correlated", 60.0, onset=0.0), total_ms=1000)
        ia = sch.open[sch.odour_valves["IA"]]
        eb = sch.open[sch.odour_valves["EB"]]
        assert np.array_equal(ia, eb)
        # open windows last one half-cycle ~ 8.33 ms
        spans = sch.pulse_intervals("IA")
        widths = [e - s for s, e in spans]
        assert all(abs(w - 1000.0 / 60.0 / 2) <= SHATTER_MS for w in widths)

    def test_flow_compensation_at_60pct(self):
        # carrier duty reduced by exactly the odour duty, window by window
        sch = build_schedule(spec_single(conc=0.6, onset=0.0, duration=1000.0), total_ms=1000)
        duty = sch.window_duty()
        man0 = duty[VALVE_MANIFOLD == 0].sum(axis=0)
        assert np.all(man0 == SUBTICKS_PER_WINDOW)
        # shattering duty equals concentration on average
        ia = duty[sch.odour_valves["IA"]]
        active = ia[ia > 0]
        assert abs(active.mean() / SUBTICKS_PER_WINDOW - 0.6) < 0.01

    def test_flow_conservation_per_manifold_single_and_anti(self):
        for spec in (spec_single(conc=0.8), spec_train("anti-correlated", 10.0)):
            sch = build_schedule(spec, total_ms=1500)
            duty = sch.window_duty()
            for m in (0, 1):
                tot = duty[VALVE_MANIFOLD == m].sum(axis=0)
                assert np.all(tot == SUBTICKS_PER_WINDOW), f"manifold {m} not constant"

    def test_flow_conservation_system_level_correlated_same_manifold(self):
        # IA and EB share manifold 1; at full duty the second carrier takes
        # over so the system total stays constant.
        sch = build_schedule(spec_train("correlated", 10.0), total_ms=1500)
        duty = sch.window_duty()
        assert np.all(duty.sum(axis=0) == 2 * SUBTICKS_PER_WINDOW)

    def test_cross_correlation_phase_property(self):
        for mode, freq in (("anti-correlated", 10.0), ("correlated", 10.0)):
            sch = build_schedule(spec_train(mode, freq, onset=0.0), total_ms=1000)
            tr = transport(sch, TransportParams(delay_ms=0.0, tau_ms=0.1))
            a = tr.get("IA") - tr.get("IA").mean()
            b = tr.get("EB") - tr.get("EB").mean()
            period = int(1000 / freq)
            lags = range(period)
            xc = [float(np.dot(a[: len(a) - lag], b[lag:])) for lag in lags]
            best = int(np.argmax(xc))
            expect = period // 2 if mode == "anti-correlated" else 0
            assert abs(best - expect) <= 2


class TestTransport:
    def test_all_closed_gives_zero(self):
        sch = build_schedule(spec_single(onset=100.0, duration=50.0), total_ms=500)
        sch.open[:] = False
        tr = transport(sch)
        assert np.all(tr.get("IA") == 0.0)

    def test_unit_step_first_order_response(self):
        # step open at t=0, delay 10 ms, tau 8 ms: 1 - 1/e at t = 18 ms
        sch = build_schedule(spec_single(onset=0.0, duration=400.0), total_ms=500)
        sub = transport_subtick(sch, "IA", TransportParams(delay_ms=10.0, tau_ms=8.0))
        # state after sub-tick k is the value at t = 0.5*(k+1)
        k = int(18.0 / 0.5) - 1
        assert sub[k] == pytest.approx(1.0 - math.exp(-1.0), abs=1e-12)
        # the 1 kHz trace crosses 1 - 1/e at t = 18 ms (within one sample)
        trace = transport(sch, TransportParams(delay_ms=10.0, tau_ms=8.0)).get("IA")
        level = 1.0 - math.exp(-1.0)
        assert trace[17] < level <= trace[18]

    def test_shattering_ripple_attenuation(self):
        # 2 ms shattering at duty 0.5: mean 0.5; carrier ripple attenuated by
        # the discrete first-order response; approximately the continuous
        # 1/sqrt(1+(2*pi*tau/T)^2) law.
        spec = StimulusSpec(odours=("IA",), pulse_duration_ms=2000.0,
                            concentration=0.6, onset_time_ms=0.0)
        # duty 0.5 is realisable exactly: use concentration 0.6? No - use 0.5
        # via a custom schedule: open 2 of 4 sub-ticks per window.
        sch = build_schedule(spec, total_ms=2000)
        valve = sch.odour_valves["IA"]
        n = sch.n_subticks
        pattern = np.zeros(n, dtype=bool)
        pattern[::4] = True
        pattern[1::4] = True
        sch.open[valve] = pattern
        sub = transport_subtick(sch, "IA", TransportParams(delay_ms=0.0, tau_ms=8.0))
        ss = sub[2000:]
        assert ss.mean() == pytest.approx(0.5, abs=1e-3)
        # exact discrete periodic steady state: pp = (1-E)/(1+E), E = e^(-1/8)
        e_half = math.exp(-1.0 / 8.0)
        expect_pp = (1 - e_half) / (1 + e_half)
        pp = ss.max() - ss.min()
        assert pp == pytest.approx(expect_pp, rel=1e-6)
        cont = 1.0 / math.sqrt(1.0 + (2 * math.pi * 8.0 / 2.0) ** 2)
        # continuous-filter fundamental attenuation matches within ~60%
        fund_ratio = pp / (4 / math.pi)  # square-wave fundamental pp = 4/pi
        assert 0.4 < fund_ratio / cont < 1.7


class TestFidelity:
    def test_ideal_square_wave(self):
        sch = build_schedule(spec_train("anti-correlated", 10.0, onset=100.0), total_ms=1300)
        trace = sch.valve_duty_1khz(sch.odour_valves["IA"])
        mean, std = fidelity(trace, sch, odour="IA")
        assert mean == pytest.approx(1.0)
        assert std == pytest.approx(0.0)

    def test_constant_trace_zero_fidelity(self):
        sch = build_schedule(spec_train("anti-correlated", 10.0, onset=0.0), total_ms=1000)
        mean, _ = fidelity(np.full(1000, 0.7), sch, odour="IA")
        assert mean == 0.0

    def test_no_pulses_is_error(self):
        sch = build_schedule(spec_single(onset=100.0), total_ms=1500)
        sch.open[:] = False
        sch.odour_valves = {}
        with pytest.raises(ScheduleError):
            fidelity(np.zeros(1500), sch)

    def test_10hz_train_matches_first_order_theory(self):
        # through a pure first-order transport, each pulse's fidelity is
        # 1 - exp(-t_off/tau) regardless of the starting level
        sch = build_schedule(spec_train("anti-correlated", 10.0, onset=100.0), total_ms=1400)
        tr = transport(sch, TransportParams(delay_ms=10.0, tau_ms=8.0))
        mean, _ = fidelity(tr.get("IA"), sch, odour="IA", delay_ms=10.0)
        expect = 1.0 - math.exp(-50.0 / 8.0)
        assert mean == pytest.approx(expect, rel=0.01)

    def test_monotone_in_frequency(self):
        prev = 1.1
        for freq in (2.0, 10.0, 20.0, 40.0, 60.0):
            sch = build_schedule(spec_train("anti-correlated", freq, onset=100.0), total_ms=1400)
            tr = transport(sch, TransportParams(delay_ms=10.0, tau_ms=8.0))
            mean, _ = fidelity(tr.get("IA"), sch, odour="IA", delay_ms=10.0)
            assert mean <= prev + 1e-9
            prev = mean


@settings(max_examples=25, deadline=None)
@given(
    conc=st.sampled_from([0.2, 0.4, 0.6, 0.8, 1.0]),
    freq=st.sampled_from([1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 60.0]),
    mode=st.sampled_from(["correlated", "anti-correlated"]),
)
def test_flow_conservation_property(conc, freq, mode):
    """System-wide flow is constant for every valid train, window by window."""
    spec = StimulusSpec(
        odours=("IA", "Eu"), pulse_duration_ms=1000.0, concentration=conc,
        modulation_frequency_hz=freq, correlation_mode=mode, onset_time_ms=50.0,
    )
    sch = build_schedule(spec, total_ms=1200)
    duty = sch.window_duty()
    assert np.all(duty.sum(axis=0) == 2 * SUBTICKS_PER_WINDOW)
    # concentration encoded as the mean shattering duty over in-pulse time;
    # error diffusion loses at most one sub-tick per contiguous pulse span
    valve = sch.odour_valves["IA"]
    spans = sch.pulse_intervals("IA")
    in_pulse = sum(e - s for s, e in spans) * 2  # sub-ticks commanded
    opened = sch.open[valve].sum()
    shortest_span = min(e - s for s, e in spans) * 2
    tol = 1.0 / shortest_span + 0.01
    assert abs(opened / in_pulse - conc) <= tol
