"""Heater control stack: Kalman estimation of heater resistance, R->T
calibration from power steps, learned voltage map with slow proportional
adaptation, and DAC quantisation.

Control is deliberately open-loop within a temperature step: a single constant
voltage is emitted per step, chosen from the learned map, and the map is
corrected once per completed step from the Kalman-filtered resistance estimate.
This avoids in-band control artefacts at the cost of slow adaptation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationError, PlantError


@dataclass(frozen=True)
class DacParams:
    lsb_v: float = 0.0007
    levels: int = 4096

    @property
    def vmax(self) -> float:
        return self.lsb_v * (self.levels - 1)


def quantize_dac(v: float, dac: DacParams) -> float:
    """Snap to the DAC grid; out-of-range commands clamp with a warning."""
    n = math.floor(v / dac.lsb_v + 0.5)
    if n < 0 or n > dac.levels - 1:
        warnings.warn(f"DAC command {v:.4f} V clamped to range", stacklevel=2)
        n = min(max(n, 0), dac.levels - 1)
    return n * dac.lsb_v


@dataclass(frozen=True)
class HeaterReadout:
    """One sample of the heater sense circuit."""

    v_dac: float
    v_sense: float
    r_sense: float

    @property
    def i_heat(self) -> float:
        return self.v_sense / self.r_sense

    @property
    def r_heat_raw(self) -> float:
        return (self.v_dac - self.v_sense) / self.i_heat

    @property
    def p_heat(self) -> float:
        return (self.v_dac - self.v_sense) * self.i_heat


@dataclass(frozen=True)
class KalmanState:
    """Scalar random-walk filter on the heater resistance.

    The measurement variance is inflated by the rate of change of the control
    voltage, so samples right after a DAC step (corrupted by DAC/amplifier
    settling) barely move the estimate.
    """

    r_est: float
    variance: float
    q: float = 0.0025            # ohm^2 per tick
    sigma0_sq: float = 0.04      # ohm^2
    k_t: float = 3.5             # ohm per (volt per tick)

    def validate(self) -> None:
        if self.variance <= 0:
            raise PlantError("Kalman variance must be positive")


def kalman_update(state: KalmanState, readout: HeaterReadout, dv_dac: float) -> KalmanState:
    """Predict/update with z = raw heater resistance.

    Non-positive heater current means there is no usable measurement; the
    filter then only predicts.
    """
    variance = state.variance + state.q
    if readout.i_heat <= 0:
        return replace(state, variance=variance)
    meas_var = state.sigma0_sq + (state.k_t * abs(dv_dac)) ** 2
    gain = variance / (variance + meas_var)
    r_est = state.r_est + gain * (readout.r_heat_raw - state.r_est)
    return replace(state, r_est=r_est, variance=(1.0 - gain) * variance)


@dataclass
class CalibrationMap:
    """Linear R->T model plus a learned (delta-T target -> V_dac) table."""

    slope_c_per_ohm: float
    intercept_c: float
    dt_targets_c: np.ndarray   # sorted ascending
    v_dac: np.ndarray
    t_ref_c: float             # ambient at calibration time

    def validate(self) -> None:
        if self.slope_c_per_ohm <= 0:
            raise CalibrationError("R->T slope must be positive")
        if np.any(np.diff(self.dt_targets_c) <= 0) or np.any(np.diff(self.v_dac) <= 0):
            raise CalibrationError("voltage map must be strictly increasing")

    def temperature_of(self, r_heat: float) -> float:
        return self.slope_c_per_ohm * r_heat + self.intercept_c

    def entry_index(self, target_c: float) -> int:
        """Index of the map entry for a target temperature, clamping with a
        warning outside the calibrated range."""
        dt = target_c - self.t_ref_c
        if dt < self.dt_targets_c[0] - 1e-9 or dt > self.dt_targets_c[-1] + 1e-9:
            warnings.warn(
                f"target {target_c:.1f} C outside calibrated range; clamped",
                stacklevel=2,
            )
        i = int(np.argmin(np.abs(self.dt_targets_c - dt)))
        return i

    def voltage_for(self, target_c: float) -> float:
        dt = target_c - self.t_ref_c
        lo, hi = self.dt_targets_c[0], self.dt_targets_c[-1]
        if dt <= lo:
            return float(self.v_dac[0])
        if dt >= hi:
            return float(self.v_dac[-1])
        return float(np.interp(dt, self.dt_targets_c, self.v_dac))


@dataclass
class ControllerState:
    """Per-channel controller memory."""

    setpoint_c: float = 0.0
    adapt_gain_v_per_c_s: float = 0.1
    corrections_v: dict = field(default_factory=dict)  # map index -> accumulated volts

    def apply_step_correction(
        self, cal: CalibrationMap, target_c: float, t_achieved_c: float, duration_ms: float
    ) -> float:
        """One proportional map correction per completed step; returns delta V."""
        idx = cal.entry_index(target_c)
        dv = self.adapt_gain_v_per_c_s * (target_c - t_achieved_c) * (duration_ms / 1000.0)
        cal.v_dac[idx] += dv
        self.corrections_v[idx] = self.corrections_v.get(idx, 0.0) + dv
        return dv


def required_voltage(
    target_c: float, t_ambient_c: float, c_per_w: float, r_heat_ohm: float, r_sense_ohm: float
) -> float:
    """Invert the static plant: the DAC voltage whose steady state is target_c."""
    dt = target_c - t_ambient_c
    if dt < 0:
        raise CalibrationError("target below ambient")
    p_req = dt / c_per_w
    return math.sqrt(p_req / r_heat_ohm) * (r_heat_ohm + r_sense_ohm)


def calibrate(
    power_step_log: list[tuple[float, float]],
    p_nom_w: float,
    dt_nom_c: float,
    t_ambient_c: float,
    r_sense_ohm: float,
    targets_c: list[float],
) -> CalibrationMap:
    """Fit the R->T line from settled power steps and seed the voltage map.

    The fit is anchored through the datasheet record: nominal power maps to
    the nominal temperature delta above ambient, so each logged power level
    implies a temperature via the (linear) thermal gain. The voltage map is
    then seeded by inverting the static plant model at every requested target.
    """
    powers = np.array([p for p, _ in power_step_log], dtype=np.float64)
    rs = np.array([r for _, r in power_step_log], dtype=np.float64)
    if np.unique(powers).shape[0] < 2:
        raise CalibrationError("need at least two distinct power levels")
    c_per_w = dt_nom_c / p_nom_w
    temps = t_ambient_c + c_per_w * powers
    # Least squares T = slope * R + intercept.
    a = np.vstack([rs, np.ones_like(rs)]).T
    (slope, intercept), *_ = np.linalg.lstsq(a, temps, rcond=None)
    if slope <= 0:
        raise CalibrationError("fitted R->T slope is non-positive")
    dts = np.array(sorted(t - t_ambient_c for t in targets_c), dtype=np.float64)
    v = np.empty_like(dts)
    for i, dt in enumerate(dts):
        target = t_ambient_c + dt
        r_target = (target - intercept) / slope
        v[i] = required_voltage(target, t_ambient_c, c_per_w, r_target, r_sense_ohm)
    cal = CalibrationMap(
        slope_c_per_ohm=float(slope),
        intercept_c=float(intercept),
        dt_targets_c=dts,
        v_dac=v,
        t_ref_c=t_ambient_c,
    )
    cal.validate()
    return cal


def step_temperature(
    ctrl: ControllerState,
    cal: CalibrationMap,
    target_c: float,
    duration_ms: float,
    dac: DacParams,
    dt_ms: float = 1.0,
) -> np.ndarray:
    """Voltage command trace for one open-loop temperature step.

    A single map-selected, DAC-quantised voltage is held for the whole step;
    the end-of-step correction is applied separately by the coupled simulation
    once the achieved temperature has been measured.
    """
    if duration_ms < 25.0:
        raise PlantError(f"step of {duration_ms} ms is shorter than 25 ms")
    ctrl.setpoint_c = target_c
    v = quantize_dac(cal.voltage_for(target_c), dac)
    n = int(round(duration_ms / dt_ms))
    return np.full(n, v)


def hold_constant(
    ctrl: ControllerState,
    cal: CalibrationMap,
    target_c: float,
    window_ms: float,
    dac: DacParams,
    dt_ms: float = 1.0,
) -> np.ndarray:
    """Freeze the heater voltage across a trial window.

    Identical to one long open-loop step: any temperature error is corrected
    only after the window, between stimuli.
    """
    ctrl.setpoint_c = target_c
    v = quantize_dac(cal.voltage_for(target_c), dac)
    n = int(round(window_ms / dt_ms))
    return np.full(n, v)
