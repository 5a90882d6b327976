import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastnose.errors import PlantError
from fastnose.olfactometer import BLANK, ConcentrationTrace
from fastnose.sensor_physics import (
    AdcParams,
    HotplateParams,
    PidParams,
    SensorState,
    coverage_step,
    generate_sensor_params,
    heater_resistance,
    load_sensor_params,
    parse_sensor_params,
    pid_response,
    quantize_adc,
    sensing_resistance,
    step_thermal,
)

PLANT = HotplateParams()


def make_state(t=25.0, n_od=1):
    return SensorState(temperature_c=t, theta=np.zeros(n_od))


class TestThermal:
    def test_zero_power_stays_ambient(self):
        s = make_state(PLANT.t_ambient_c)
        for _ in range(50):
            s = step_thermal(s, 0.0, 1.0, PLANT)
        assert s.temperature_c == pytest.approx(PLANT.t_ambient_c)

    def test_steady_state_is_gain_times_power(self):
        s = make_state()
        p = 0.02
        for _ in range(200):
            s = step_thermal(s, p, 1.0, PLANT)
        assert s.temperature_c == pytest.approx(
            PLANT.t_ambient_c + PLANT.thermal_gain_c_per_w * p, abs=1e-6
        )

    def test_negative_power_rejected(self):
        with pytest.raises(PlantError):
            step_thermal(make_state(), -0.1, 1.0, PLANT)

    def test_exact_exponential_step_response(self):
        # 150 -> 400 C with tau = 6 ms: within 1 C of target after
        # ~ 6*ln(250) = 33 ms of steady-state drive; < 25 ms when the drive
        # voltage targets the end-of-step temperature instead (overshoot).
        plant = HotplateParams(thermal_time_constant_ms=6.0)
        p_ss = (400.0 - plant.t_ambient_c) / plant.thermal_gain_c_per_w
        s = make_state(150.0)
        t_hit = None
        for k in range(1, 100):
            s = step_thermal(s, p_ss, 1.0, plant)
            if t_hit is None and abs(s.temperature_c - 400.0) < 1.0:
                t_hit = k
        expect = 6.0 * math.log(250.0)
        assert t_hit == pytest.approx(expect, abs=1.5)
        # overshoot drive: steady state chosen so T(25) = 400 exactly
        e25 = math.exp(-25.0 / 6.0)
        t_ss = (400.0 - 150.0 * e25) / (1.0 - e25)
        p_boost = (t_ss - plant.t_ambient_c) / plant.thermal_gain_c_per_w
        s = make_state(150.0)
        t_hit = None
        for k in range(1, 100):
            s = step_thermal(s, p_boost, 1.0, plant)
            if t_hit is None and abs(s.temperature_c - 400.0) < 1.0:
                t_hit = k
        assert t_hit < 25


class TestHeaterResistance:
    def test_reference_point(self):
        plant = HotplateParams(t_ambient_c=PLANT.t0_c)
        assert heater_resistance(plant.t0_c, plant) == pytest.approx(plant.r0_ohm)

    def test_below_ambient_rejected(self):
        with pytest.raises(PlantError):
            heater_resistance(PLANT.t_ambient_c - 10.0, PLANT)

    def test_zero_alpha_constant(self):
        p = HotplateParams(alpha_per_c=0.0)
        for t in (25.0, 150.0, 400.0):
            assert heater_resistance(t, p) == pytest.approx(p.r0_ohm)

    def test_linearity(self):
        r400 = heater_resistance(400.0, PLANT)
        r150 = heater_resistance(150.0, PLANT)
        assert (r400 - r150) / PLANT.r0_ohm == pytest.approx(PLANT.alpha_per_c * 250.0)


class TestSensingLayer:
    def layer(self):
        return load_sensor_params().sensors[0]

    def test_pure_air_law(self):
        layer = self.layer()
        s = SensorState(temperature_c=300.0, theta=np.zeros(len(layer.odours)))
        conc = np.zeros(len(layer.odours))
        for _ in range(2000):
            s, r = sensing_resistance(s, conc, 1.0, layer)
        assert math.log10(r) == pytest.approx(layer.a_s + layer.b_s * 300.0, abs=1e-9)

    def test_blank_odour_is_air(self):
        layer = self.layer()
        i_blank = layer.odours.index(BLANK)
        s = SensorState(temperature_c=350.0, theta=np.zeros(len(layer.odours)))
        conc = np.zeros(len(layer.odours))
        conc[i_blank] = 1.0
        for _ in range(1000):
            s, r = sensing_resistance(s, conc, 1.0, layer)
        assert math.log10(r) == pytest.approx(layer.a_s + layer.b_s * 350.0, abs=1e-9)

    def test_step_coverage_closed_form(self):
        # with desorption disabled, theta(t) = 1 - exp(-t/tau_ads)
        tau_ads, tau_des = 20.0, 1e12
        theta = 0.0
        for _ in range(int(tau_ads)):
            theta = coverage_step(theta, 1.0, tau_ads, tau_des, 1.0)
        assert theta == pytest.approx(1.0 - math.exp(-1.0), rel=1e-9)

    def test_monotone_in_concentration(self):
        layer = self.layer()
        vals = []
        for c in (0.0, 0.25, 0.5, 0.75, 1.0):
            s = SensorState(temperature_c=350.0, theta=np.zeros(len(layer.odours)))
            conc = np.zeros(len(layer.odours))
            conc[0] = c
            for _ in range(3000):
                s, r = sensing_resistance(s, conc, 1.0, layer)
            vals.append(r)
        assert all(vals[i + 1] <= vals[i] for i in range(len(vals) - 1))

    def test_cycle_closure_in_clean_air(self):
        # one full 50 ms temperature cycle in clean air returns the sensing
        # resistance to its starting value (no hysteresis)
        layer = self.layer()
        plant = PLANT
        p_low = (150.0 - plant.t_ambient_c) / plant.thermal_gain_c_per_w
        p_high = (400.0 - plant.t_ambient_c) / plant.thermal_gain_c_per_w
        s = SensorState(temperature_c=150.0, theta=np.zeros(len(layer.odours)))
        conc = np.zeros(len(layer.odours))
        trace = []
        for cyc in range(3):
            for k in range(50):
                s = step_thermal(s, p_low if k < 25 else p_high, 1.0, plant)
                s, r = sensing_resistance(s, conc, 1.0, layer)
                trace.append(r)
        trace = np.array(trace)
        assert trace[100] == pytest.approx(trace[50], rel=1e-6)

    def test_air_law_log_linearity(self):
        # regression of log10 R vs T over 200-400 C: residuals < 1% of range
        layer = self.layer()
        temps = np.linspace(200.0, 400.0, 50)
        logs = []
        rng = np.random.default_rng(5)
        for t in temps:
            s = SensorState(temperature_c=t, theta=np.zeros(len(layer.odours)))
            _, r = sensing_resistance(
                s, np.zeros(len(layer.odours)), 1.0, layer,
                noise_log10=rng.normal(0, 0.002),
            )
            logs.append(math.log10(r))
        logs = np.array(logs)
        fit = np.polyfit(temps, logs, 1)
        resid = logs - np.polyval(fit, temps)
        assert np.max(np.abs(resid)) < 0.01 * (logs.max() - logs.min())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=100))
def test_theta_bounds_property(concs):
    """Coverage stays within [0, 1] for any concentration trace in [0, 1]."""
    theta = 0.0
    for c in concs:
        theta = coverage_step(theta, c, 20.0, 150.0, 1.0)
        assert 0.0 <= theta <= 1.0


class TestAdc:
    def test_default_lsb_is_decimal(self):
        adc = AdcParams()
        assert adc.inv_lsb == 20.0
        assert quantize_adc(123456.789, adc) == pytest.approx(123456.80)

    def test_quantization_bound(self):
        adc = AdcParams()
        rng = np.random.default_rng(0)
        for r in rng.uniform(0, 8e5, 200):
            q = quantize_adc(float(r), adc)
            assert abs(q - r) <= 0.5 * adc.lsb_ohm + 1e-12


class TestPid:
    def trace(self, value=1.0, odour="EB", n=400, onset=100):
        vals = np.zeros((1, n))
        vals[0, onset:] = value
        return ConcentrationTrace(odours=(odour,), values=vals)

    def test_zero_concentration_noise_around_baseline(self):
        params = PidParams()
        rng = np.random.default_rng(3)
        out = pid_response(self.trace(0.0), params, noise=rng.normal(0, params.noise_v, 400))
        assert abs(out.mean() - params.baseline_v) < 3 * params.noise_v
        assert out.std() == pytest.approx(params.noise_v, rel=0.3)

    def test_unit_pulse_crosses_4sigma_within_10ms(self):
        params = PidParams()
        rng = np.random.default_rng(4)
        out = pid_response(self.trace(1.0), params, noise=rng.normal(0, params.noise_v, 400))
        base = out[:100]
        thresh = base.mean() + 4 * base.std()
        crossing = np.argmax(out[100:] > thresh)
        assert crossing <= 10

    def test_correlated_pulses_add_linearly(self):
        params = PidParams(noise_v=0.0)
        vals = np.zeros((2, 300))
        vals[:, 100:] = 1.0
        both = pid_response(ConcentrationTrace(odours=("IA", "EB"), values=vals), params)
        ia = pid_response(ConcentrationTrace(odours=("IA",), values=vals[:1]), params)
        eb = pid_response(ConcentrationTrace(odours=("EB",), values=vals[1:]), params)
        assert both[-1] - params.baseline_v == pytest.approx(
            (ia[-1] - params.baseline_v) + (eb[-1] - params.baseline_v)
        )

    def test_blank_gain_must_be_zero(self):
        with pytest.raises(PlantError):
            pid_response(self.trace(1.0), PidParams(gains={BLANK: 0.5}))


class TestParameterTable:
    def test_checked_in_table_matches_generator(self):
        assert load_sensor_params().text == generate_sensor_params()

    def test_round_trip_and_validation(self):
        table = parse_sensor_params(generate_sensor_params(seed=99))
        assert len(table.sensors) == 8
        for layer in table.sensors:
            layer.validate()
            i_blank = layer.odours.index(BLANK)
            assert layer.beta_max[i_blank] == 0.0
        assert table.p_nom_w > 0 and table.dt_nom_c > 0

    def test_digest_changes_with_content(self):
        a = parse_sensor_params(generate_sensor_params(seed=1))
        b = parse_sensor_params(generate_sensor_params(seed=2))
        assert a.digest != b.digest
