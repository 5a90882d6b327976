"""Ground-truth plant: hotplate thermdynamics, heater R(T) law, MOx sensing
layer, ADC quantisation, and the photoionization reference instrument.

The sensing layer couples a Gaussian temperature-sensitivity profile with
first-order adsorption/desorption coverage kinetics:

    d(theta)/dt = c * (1 - theta) / tau_ads - theta * (1 - c) / tau_des
    log10 R     = a_s + b_s * T - sum_odours beta(T) * theta
    beta(T)     = beta_max * exp(-((T - T_opt) / w)^2)

which yields temperature-cycle-dependent response shapes per odour, an
asymmetric rise/purge, and sensor diversity through per-sensor parameter sets.
All integrators use exact exponential updates for piecewise-constant inputs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ._kernels import first_order_filter
from .errors import DataError, PlantError
from .olfactometer import BLANK, ODOURS, ConcentrationTrace, odour_class

LN10 = math.log(10.0)


@dataclass(frozen=True)
class HotplateParams:
    thermal_time_constant_ms: float = 3.0
    thermal_gain_c_per_w: float = 10000.0
    r0_ohm: float = 50.0
    alpha_per_c: float = 0.003
    t0_c: float = 20.0
    t_ambient_c: float = 25.0

    def validate(self) -> None:
        if self.thermal_time_constant_ms <= 0:
            raise PlantError("thermal time constant must be positive")
        if self.alpha_per_c < 0:
            raise PlantError("temperature coefficient must be non-negative")


@dataclass(frozen=True)
class SensingLayerParams:
    """Air law plus per-odour response parameters of one sensor."""

    odours: tuple[str, ...]
    beta_max: np.ndarray      # log10-resistance drop at full coverage
    t_opt_c: np.ndarray
    w_c: np.ndarray
    tau_ads_ms: np.ndarray
    tau_des_ms: np.ndarray
    a_s: float
    b_s: float

    def validate(self) -> None:
        if np.any(self.tau_ads_ms <= 0) or np.any(self.tau_des_ms < self.tau_ads_ms):
            raise PlantError("need tau_des >= tau_ads > 0")
        if np.any(self.beta_max < 0):
            raise PlantError("beta_max must be non-negative")
        for i, od in enumerate(self.odours):
            if odour_class(od) == BLANK and self.beta_max[i] != 0:
                raise PlantError("blank odour must have beta_max = 0")

    def select(self, odours: tuple[str, ...]) -> "SensingLayerParams":
        """Restrict to the odours of one trial (blanks map to zero response)."""
        idx = []
        for od in odours:
            cls = odour_class(od)
            if cls == BLANK:
                idx.append(-1)
            else:
                idx.append(self.odours.index(cls))
        take = lambda arr, fill: np.array(
            [arr[i] if i >= 0 else fill for i in idx], dtype=np.float64
        )
        return replace(
            self,
            odours=odours,
            beta_max=take(self.beta_max, 0.0),
            t_opt_c=take(self.t_opt_c, 300.0),
            w_c=take(self.w_c, 100.0),
            tau_ads_ms=take(self.tau_ads_ms, 20.0),
            tau_des_ms=take(self.tau_des_ms, 150.0),
        )


@dataclass(frozen=True)
class AdcParams:
    full_scale_ohm: float = 838860.8
    bits: int = 24

    @property
    def inv_lsb(self) -> float:
        """Quantisation levels per ohm, snapped to an integer when the full
        scale was chosen to make the LSB decimal-exact (default: 20/ohm)."""
        inv = (1 << self.bits) / self.full_scale_ohm
        r = round(inv)
        return float(r) if abs(inv - r) < 1e-9 * max(1.0, abs(inv)) else inv

    @property
    def lsb_ohm(self) -> float:
        return 1.0 / self.inv_lsb


@dataclass
class SensorState:
    temperature_c: float
    theta: np.ndarray
    last_resistance_ohm: float = 0.0

    def validate(self, params: HotplateParams) -> None:
        if np.any(self.theta < 0) or np.any(self.theta > 1):
            raise PlantError("coverage out of [0, 1]")
        if self.temperature_c < params.t_ambient_c - 1e-9:
            raise PlantError("temperature below ambient")


@dataclass(frozen=True)
class PidParams:
    tau_ms: float = 3.0
    gains: dict = field(default_factory=lambda: {
        "IA": 0.8, "EB": 1.0, "Eu": 0.6, "2H": 0.7, BLANK: 0.0,
    })
    noise_v: float = 0.002
    baseline_v: float = 0.05

    def gain(self, odour: str) -> float:
        return float(self.gains.get(odour_class(odour), 0.0))


def heater_resistance(temperature_c: float, params: HotplateParams) -> float:
    """Quasi-linear heater law R(T) = R0 * (1 + alpha * (T - T0))."""
    if temperature_c < params.t_ambient_c - 1e-9:
        raise PlantError(f"temperature {temperature_c} below ambient")
    return params.r0_ohm * (1.0 + params.alpha_per_c * (temperature_c - params.t0_c))


def step_thermal(
    state: SensorState, heater_power_w: float, dt_ms: float, params: HotplateParams
) -> SensorState:
    """Advance hotplate temperature by dt with the power held constant.

    dT/dt = (gain * P - (T - T_amb)) / tau, integrated exactly.
    """
    if heater_power_w < 0:
        raise PlantError("negative heater power")
    t_ss = params.t_ambient_c + params.thermal_gain_c_per_w * heater_power_w
    decay = math.exp(-dt_ms / params.thermal_time_constant_ms)
    new_t = t_ss + (state.temperature_c - t_ss) * decay
    return SensorState(
        temperature_c=new_t, theta=state.theta, last_resistance_ohm=state.last_resistance_ohm
    )


def coverage_step(
    theta: float, concentration: float, tau_ads_ms: float, tau_des_ms: float, dt_ms: float
) -> float:
    """Exact update of the adsorption kinetics for constant concentration."""
    rate = concentration / tau_ads_ms + (1.0 - concentration) / tau_des_ms
    theta_ss = (concentration / tau_ads_ms) / rate
    return theta_ss + (theta - theta_ss) * math.exp(-rate * dt_ms)


def quantize_adc(resistance_ohm: float, adc: AdcParams) -> float:
    """Round to the converter grid, clamped to full scale."""
    inv = adc.inv_lsb
    n = math.floor(resistance_ohm * inv + 0.5)
    n = min(max(n, 0), (1 << adc.bits) - 1)
    return n / inv


def sensing_resistance(
    state: SensorState,
    concentrations: np.ndarray,
    dt_ms: float,
    layer: SensingLayerParams,
    adc: AdcParams | None = None,
    noise_log10: float = 0.0,
) -> tuple[SensorState, float]:
    """One 1 ms tick of the sensing layer, returning (new state, resistance).

    Coverage advances first, then the resistance is evaluated at the current
    hotplate temperature, noise is applied in log10 units, and the value is
    quantised through the ADC model.
    """
    theta = state.theta.copy()
    t = state.temperature_c
    log10_r = layer.a_s + layer.b_s * t
    for i in range(theta.shape[0]):
        c = float(concentrations[i])
        theta[i] = coverage_step(theta[i], c, layer.tau_ads_ms[i], layer.tau_des_ms[i], dt_ms)
        arg = (t - layer.t_opt_c[i]) / layer.w_c[i]
        beta = layer.beta_max[i] * math.exp(-arg * arg)
        log10_r -= beta * theta[i]
    log10_r += noise_log10
    r = math.exp(log10_r * LN10)
    if adc is not None:
        r = quantize_adc(r, adc)
    return SensorState(temperature_c=t, theta=theta, last_resistance_ohm=r), r


def pid_response(
    trace: ConcentrationTrace,
    params: PidParams,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Reference instrument: weighted odour sum, first-order lag, noise."""
    if params.gain(BLANK) != 0.0:
        raise PlantError("blank must carry zero ionization gain")
    dt_ms = 1000.0 / trace.sample_rate_hz
    drive = np.zeros(trace.values.shape[1])
    for i, od in enumerate(trace.odours):
        drive += params.gain(od) * trace.values[i]
    out = first_order_filter(drive, params.tau_ms, dt_ms)
    out += params.baseline_v
    if noise is not None:
        out = out + noise
    return out


# ---------------------------------------------------------------------------
# Sensor parameter table (checked-in file; regenerate with generate_sensor_params)

N_SENSORS = 8
PARAMS_COLUMNS = (
    "sensor_id", "odour", "beta_max", "t_opt_c", "w_c", "tau_ads_ms",
    "tau_des_ms", "a_s", "b_s", "p_nom_w", "dt_nom_c",
)
DEFAULT_PARAMS_SEED = 20230917


@dataclass(frozen=True)
class SensorTable:
    """All eight sensors plus the synthetic datasheet anchor."""

    sensors: tuple[SensingLayerParams, ...]
    p_nom_w: float
    dt_nom_c: float
    text: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]


def generate_sensor_params(seed: int = DEFAULT_PARAMS_SEED) -> str:
    """Render a fresh parameter table; results are frozen in data/sensor_params.csv."""
    rng = np.random.default_rng(seed)
    lines = [",".join(PARAMS_COLUMNS)]
    for s in range(1, N_SENSORS + 1):
        for oi, od in enumerate(ODOURS):
            t_opt = rng.uniform(250.0, 430.0)
            w = rng.uniform(70.0, 160.0)
            # Two sensing-layer families (the board mixes two sensor types):
            # 1-4 respond strongly and saturate within milliseconds, each with
            # one primary odour it is most selective for; 5-8 are weaker and
            # slower, and their unsaturated steady coverage resolves
            # concentration.
            if s <= 4:
                if oi == s - 1:
                    beta = rng.uniform(0.5, 0.9)
                else:
                    beta = float(np.exp(rng.uniform(np.log(0.08), np.log(0.35))))
                tau_ads = rng.uniform(2.5, 5.0)
                tau_des = rng.uniform(15.0, 60.0)
            else:
                beta = rng.uniform(0.15, 0.4)
                tau_ads = rng.uniform(15.0, 30.0)
                tau_des = rng.uniform(90.0, 150.0)
            lines.append(
                f"{s},{od},{beta:.4f},{t_opt:.1f},{w:.1f},{tau_ads:.1f},{tau_des:.1f},,,,"
            )
        lines.append(f"{s},{BLANK},0.0000,300.0,100.0,20.0,150.0,,,,")
        a_s = rng.uniform(5.7, 6.3)
        b_s = rng.uniform(-0.0044, -0.0036)
        lines.append(f"{s},air,,,,,,{a_s:.4f},{b_s:.6f},,")
        lines.append(f"{s},datasheet,,,,,,,,0.038,380.0")
    return "\n".join(lines) + "\n"


def parse_sensor_params(text: str) -> SensorTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    if tuple(header) != PARAMS_COLUMNS:
        raise DataError(f"unexpected sensor parameter columns: {header}")
    rows = [ln.split(",") for ln in lines[1:]]
    sensors = []
    p_nom = dt_nom = None
    for s in range(1, N_SENSORS + 1):
        mine = [r for r in rows if r[0] == str(s)]
        if not mine:
            raise DataError(f"sensor {s} missing from parameter file")
        odour_rows = {r[1]: r for r in mine}
        air = odour_rows.get("air")
        if air is None:
            raise DataError(f"sensor {s} has no air-law row")
        odours = tuple(list(ODOURS) + [BLANK])
        get = lambda od, col: float(odour_rows[od][PARAMS_COLUMNS.index(col)])
        layer = SensingLayerParams(
            odours=odours,
            beta_max=np.array([get(od, "beta_max") for od in odours]),
            t_opt_c=np.array([get(od, "t_opt_c") for od in odours]),
            w_c=np.array([get(od, "w_c") for od in odours]),
            tau_ads_ms=np.array([get(od, "tau_ads_ms") for od in odours]),
            tau_des_ms=np.array([get(od, "tau_des_ms") for od in odours]),
            a_s=float(air[PARAMS_COLUMNS.index("a_s")]),
            b_s=float(air[PARAMS_COLUMNS.index("b_s")]),
        )
        layer.validate()
        sensors.append(layer)
        sheet = odour_rows.get("datasheet")
        if sheet is not None:
            p_nom = float(sheet[PARAMS_COLUMNS.index("p_nom_w")])
            dt_nom = float(sheet[PARAMS_COLUMNS.index("dt_nom_c")])
    if p_nom is None or dt_nom is None:
        raise DataError("parameter file lacks a datasheet anchor row")
    return SensorTable(sensors=tuple(sensors), p_nom_w=p_nom, dt_nom_c=dt_nom, text=text)


def load_sensor_params(path: str | Path | None = None) -> SensorTable:
    """Load the checked-in table, or an explicit file."""
    if path is None:
        text = resources.files("fastnose.data").joinpath("sensor_params.csv").read_text()
    else:
        text = Path(path).read_text()
    return parse_sensor_params(text)
