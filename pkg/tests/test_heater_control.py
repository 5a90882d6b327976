import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastnose.errors import CalibrationError
from fastnose.heater_control import (
    CalibrationMap,
    ControllerState,
    DacParams,
    HeaterReadout,
    KalmanState,
    calibrate,
    hold_constant,
    kalman_update,
    quantize_dac,
    required_voltage,
    step_temperature,
)
from fastnose.simulate import PlantScalars, calibrate_channel, settle_open_loop
from fastnose.sensor_physics import load_sensor_params

DAC = DacParams()


def make_plant():
    cfgvals = dict(
        tau_th_ms=3.0, gain_c_per_w=10000.0, r0=50.0, alpha=0.003, t0=20.0,
        t_amb0=25.0, amb_amp=0.0, amb_omega=0.0, amb_phase=0.0,
        r_sense=10.0, lag_coeff=1.0 - math.exp(-2.0),
    )
    return PlantScalars(**cfgvals)


class TestQuantizeDac:
    def test_on_grid_unchanged(self):
        v = 1000 * DAC.lsb_v
        assert quantize_dac(v, DAC) == pytest.approx(v)

    def test_rounds_down_below_half_lsb(self):
        v = 1000 * DAC.lsb_v + 0.49 * DAC.lsb_v
        assert quantize_dac(v, DAC) == pytest.approx(1000 * DAC.lsb_v)

    def test_clamps_with_warning(self):
        with pytest.warns(UserWarning):
            assert quantize_dac(DAC.vmax + 1.0, DAC) == pytest.approx(DAC.vmax)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=0.0, max_value=2.8))
    def test_rounding_bound_property(self, v):
        assert abs(quantize_dac(v, DAC) - v) <= 0.5 * DAC.lsb_v + 1e-12


class TestKalman:
    def make_readout(self, r_true, v_dac):
        i = v_dac / (r_true + 10.0)
        return HeaterReadout(v_dac=v_dac, v_sense=i * 10.0, r_sense=10.0)

    def test_converges_to_truth_monotonically(self):
        r_true = 80.0
        state = KalmanState(r_est=120.0, variance=4.0)
        errors = []
        for _ in range(100):
            state = kalman_update(state, self.make_readout(r_true, 2.0), 0.0)
            errors.append(abs(state.r_est - r_true))
        assert errors[-1] < 1e-6
        assert all(errors[i + 1] <= errors[i] + 1e-12 for i in range(len(errors) - 1))

    def test_measurement_variance_at_zero_dv(self):
        # with dv = 0 the gain reduces to var/(var + sigma0^2) exactly
        state = KalmanState(r_est=100.0, variance=1.0)
        out = kalman_update(state, self.make_readout(90.0, 2.0), 0.0)
        prior = state.variance + state.q
        gain = prior / (prior + state.sigma0_sq)
        assert out.r_est == pytest.approx(100.0 + gain * (90.0 - 100.0))

    def test_transient_inflation_freezes_estimate(self):
        # after a full-scale step the posterior moves by < 10% of the innovation
        state = KalmanState(r_est=100.0, variance=0.01)
        dv = DAC.vmax
        out = kalman_update(state, self.make_readout(140.0, 2.0), dv)
        innovation = 140.0 - 100.0
        assert abs(out.r_est - state.r_est) < 0.1 * abs(innovation)

    def test_skips_measurement_at_zero_current(self):
        state = KalmanState(r_est=100.0, variance=1.0)
        out = kalman_update(state, HeaterReadout(v_dac=0.0, v_sense=0.0, r_sense=10.0), 0.0)
        assert out.r_est == state.r_est
        assert out.variance == state.variance + state.q

    def test_nis_consistency_correctly_specified(self):
        # truth random-walks with q, measurements carry sigma0 noise: the
        # normalized innovation squared averages ~1 over 1e4 ticks
        rng = np.random.default_rng(11)
        q, sig0 = 0.0025, 0.2
        state = KalmanState(r_est=100.0, variance=1.0, q=q, sigma0_sq=sig0**2)
        truth = 100.0
        nis = []
        for _ in range(10_000):
            truth += rng.normal(0, math.sqrt(q))
            z = truth + rng.normal(0, sig0)
            prior_var = state.variance + q
            innov = z - state.r_est
            nis.append(innov**2 / (prior_var + sig0**2))
            i = 2.0 / (z + 10.0)
            state = kalman_update(
                state, HeaterReadout(v_dac=2.0, v_sense=i * 10.0, r_sense=10.0), 0.0
            )
        assert 0.8 < float(np.mean(nis)) < 1.2


class TestCalibrate:
    def test_recovers_linear_plant(self):
        plant = make_plant()
        table = load_sensor_params()
        cal = calibrate_channel(plant, table, [150.0, 400.0])
        slope_true = 1.0 / (plant.r0 * plant.alpha)
        intercept_true = plant.t0 - 1.0 / plant.alpha
        assert cal.slope_c_per_ohm == pytest.approx(slope_true, rel=1e-3)
        assert cal.intercept_c == pytest.approx(intercept_true, rel=1e-3)

    def test_two_points_interpolate_exactly(self):
        log = [(0.01, 70.0), (0.03, 110.0)]
        cal = calibrate(log, 0.038, 380.0, 25.0, 10.0, [150.0, 400.0])
        # T(R) line passes through both (R, T) pairs
        for p, r in log:
            t = 25.0 + (380.0 / 0.038) * p
            assert cal.temperature_of(r) == pytest.approx(t, abs=1e-9)

    def test_single_level_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate([(0.01, 70.0), (0.01, 70.0)], 0.038, 380.0, 25.0, 10.0, [400.0])

    def test_noise_averages_out(self):
        # OLS slope error shrinks ~ 1/sqrt(N) over repeated noisy sweeps
        rng = np.random.default_rng(2)
        slope_true = 1.0 / (50.0 * 0.003)

        def fit_error(n_rep):
            log = []
            for _ in range(n_rep):
                for p in (0.01, 0.02, 0.03, 0.04):
                    t = 25.0 + 10000.0 * p
                    r = (t - (20.0 - 1 / 0.003)) / slope_true + rng.normal(0, 0.5)
                    log.append((p, r))
            cal = calibrate(log, 0.038, 380.0, 25.0, 10.0, [400.0])
            return abs(cal.slope_c_per_ohm - slope_true)

        few = np.mean([fit_error(2) for _ in range(30)])
        many = np.mean([fit_error(32) for _ in range(30)])
        assert many < few / 2.0  # expect ~1/4 from 16x the data

    def test_voltage_map_inverts_plant(self):
        plant = make_plant()
        table = load_sensor_params()
        cal = calibrate_channel(plant, table, [150.0, 400.0])
        for target, v in zip(cal.dt_targets_c + cal.t_ref_c, cal.v_dac):
            _, r_heat = settle_open_loop(plant, float(v))
            t_achieved = cal.temperature_of(r_heat)
            assert t_achieved == pytest.approx(target, abs=1.0)


class TestControllerSurface:
    def cal(self):
        plant = make_plant()
        return calibrate_channel(plant, load_sensor_params(), [150.0, 400.0])

    def test_step_emits_single_quantized_voltage(self):
        cal = self.cal()
        ctrl = ControllerState()
        trace = step_temperature(ctrl, cal, 400.0, 50.0, DAC)
        assert trace.shape == (50,)
        assert np.unique(trace).shape == (1,)
        assert trace[0] == quantize_dac(cal.voltage_for(400.0), DAC)

    def test_hold_constant_frozen_for_window(self):
        cal = self.cal()
        trace = hold_constant(ControllerState(), cal, 400.0, 2000.0, DAC)
        assert np.unique(trace).shape == (1,)

    def test_out_of_range_target_clamps_with_warning(self):
        cal = self.cal()
        with pytest.warns(UserWarning):
            idx = cal.entry_index(500.0)
        assert idx == len(cal.dt_targets_c) - 1

    def test_adaptation_bounded(self):
        cal = self.cal()
        ctrl = ControllerState()
        before = cal.v_dac.copy()
        dv = ctrl.apply_step_correction(cal, 400.0, 390.0, 25.0)
        bound = ctrl.adapt_gain_v_per_c_s * 10.0 * 0.025
        assert abs(dv) <= bound + 1e-12
        assert np.max(np.abs(cal.v_dac - before)) <= bound + 1e-12
