"""Odour delivery device: valve schedules, transport to the sensing site, fidelity.

The device has 8 high-speed valves on two manifolds (4 + 4). One valve per
manifold carries odourless solvent and stays open as a flow carrier; it is
throttled (and, if necessary, the other manifold's carrier as well) so that
total airflow stays constant while odour valves switch. Valve commands are
"shattered": convolved with a 500 Hz carrier (2 ms period) whose duty cycle
encodes concentration. Shattering is realised on a 0.5 ms sub-tick grid and
decimated to the 1 kHz simulation rate by averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import first_order_filter
from .errors import ScheduleError

ODOURS = ("IA", "EB", "Eu", "2H")
BLANK = "blank"
PROTOCOL_CONCENTRATIONS = (0.2, 0.4, 0.6, 0.8, 1.0)
TRAIN_FREQUENCIES_HZ = (1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 60.0)
CORRELATION_MODES = ("single", "correlated", "anti-correlated")

SUBTICK_MS = 0.5
SHATTER_MS = 2.0
SUBTICKS_PER_WINDOW = int(SHATTER_MS / SUBTICK_MS)  # 4
SUBTICKS_PER_MS = int(1.0 / SUBTICK_MS)  # 2

# Valve layout: two manifolds of four, first valve of each is the carrier.
VALVE_NAMES = (
    "carrier1", "IA", "EB", "blank1",
    "carrier2", "Eu", "2H", "blank2",
)
VALVE_MANIFOLD = np.array([0, 0, 0, 0, 1, 1, 1, 1])
CARRIER_VALVES = np.array([True, False, False, False, True, False, False, False])
# Odour id -> valve index. The two control vials both hold pure solvent;
# "blank2" names the second vial where a distinct channel is needed.
ODOUR_VALVE = {"IA": 1, "EB": 2, "Eu": 5, "2H": 6, "blank": 3, "blank2": 7}


def odour_class(odour: str) -> str:
    """Collapse the two solvent vials onto the single 'blank' class."""
    return BLANK if odour.startswith(BLANK) else odour


@dataclass(frozen=True)
class StimulusSpec:
    """One stimulus: a single pulse or a pair of pulse trains."""

    odours: tuple[str, ...]
    pulse_duration_ms: float
    concentration: float
    modulation_frequency_hz: float = 0.0
    correlation_mode: str = "single"
    onset_time_ms: float = 0.0

    def validate(self) -> None:
        if not (1 <= len(self.odours) <= 2):
            raise ScheduleError(f"need 1 or 2 odours, got {self.odours!r}")
        for od in self.odours:
            if od not in ODOUR_VALVE:
                raise ScheduleError(f"unknown odour {od!r}")
        if self.correlation_mode not in CORRELATION_MODES:
            raise ScheduleError(f"unknown correlation mode {self.correlation_mode!r}")
        if self.correlation_mode == "single":
            if len(self.odours) != 1 or self.modulation_frequency_hz != 0:
                raise ScheduleError("single mode takes one odour and frequency 0")
        else:
            if len(self.odours) != 2:
                raise ScheduleError(f"{self.correlation_mode} requires exactly 2 odours")
            if self.modulation_frequency_hz not in TRAIN_FREQUENCIES_HZ:
                raise ScheduleError(
                    f"train frequency {self.modulation_frequency_hz} Hz not in "
                    f"{TRAIN_FREQUENCIES_HZ}"
                )
        if not any(math.isclose(self.concentration, c) for c in PROTOCOL_CONCENTRATIONS):
            raise ScheduleError(
                f"concentration {self.concentration} not in {PROTOCOL_CONCENTRATIONS}"
            )
        if self.pulse_duration_ms < SHATTER_MS:
            raise ScheduleError(
                f"pulse of {self.pulse_duration_ms} ms is shorter than one "
                f"{SHATTER_MS} ms shattering period"
            )
        if self.correlation_mode != "single":
            period = 1000.0 / self.modulation_frequency_hz
            if self.pulse_duration_ms + 1e-9 < period:
                raise ScheduleError(
                    f"train of {self.pulse_duration_ms} ms holds no complete "
                    f"{period:.1f} ms cycle"
                )
            if period / 2 < SHATTER_MS:
                raise ScheduleError("half-cycle shorter than one shattering period")
        if self.onset_time_ms < 0:
            raise ScheduleError("onset must be non-negative")


@dataclass
class ValveSchedule:
    """Boolean command trace per valve on the 0.5 ms sub-tick grid."""

    open: np.ndarray  # bool, (n_valves, n_subticks)
    subtick_ms: float = SUBTICK_MS
    carrier: np.ndarray = field(default_factory=lambda: CARRIER_VALVES.copy())
    manifold: np.ndarray = field(default_factory=lambda: VALVE_MANIFOLD.copy())
    odour_valves: dict[str, int] = field(default_factory=dict)  # odour -> valve row
    spec: StimulusSpec | None = None

    @property
    def n_subticks(self) -> int:
        return self.open.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.n_subticks * self.subtick_ms

    def window_duty(self) -> np.ndarray:
        """Open sub-ticks per valve per 2 ms shattering window."""
        n_win = self.n_subticks // SUBTICKS_PER_WINDOW
        trimmed = self.open[:, : n_win * SUBTICKS_PER_WINDOW]
        return trimmed.reshape(self.open.shape[0], n_win, SUBTICKS_PER_WINDOW).sum(axis=2)

    def valve_duty_1khz(self, valve: int) -> np.ndarray:
        """Mean open fraction of one valve per 1 ms tick."""
        n_ms = self.n_subticks // SUBTICKS_PER_MS
        v = self.open[valve, : n_ms * SUBTICKS_PER_MS].astype(np.float64)
        return v.reshape(n_ms, SUBTICKS_PER_MS).mean(axis=1)

    def pulse_intervals(self, odour: str) -> list[tuple[float, float]]:
        """Contiguous (start_ms, end_ms) spans where the odour valve carries duty."""
        valve = self.odour_valves[odour]
        duty = self.window_duty()[valve] > 0
        spans = []
        start = None
        for w, on in enumerate(duty):
            if on and start is None:
                start = w
            elif not on and start is not None:
                spans.append((start * SHATTER_MS, w * SHATTER_MS))
                start = None
        if start is not None:
            spans.append((start * SHATTER_MS, len(duty) * SHATTER_MS))
        return spans


def _pulse_windows(spec: StimulusSpec) -> dict[str, list[tuple[float, float]]]:
    """Per odour, the commanded open intervals in ms (before shattering)."""
    t0 = spec.onset_time_ms
    dur = spec.pulse_duration_ms
    if spec.correlation_mode == "single":
        return {spec.odours[0]: [(t0, t0 + dur)]}
    period = 1000.0 / spec.modulation_frequency_hz
    half = period / 2
    n_cycles = int(round(dur / period))
    a, b = spec.odours
    win_a = [(t0 + j * period, t0 + j * period + half) for j in range(n_cycles)]
    if spec.correlation_mode == "correlated":
        win_b = list(win_a)
    else:
        win_b = [(s + half, e + half) for s, e in win_a]
    return {a: win_a, b: win_b}


def build_schedule(spec: StimulusSpec, total_ms: float | None = None) -> ValveSchedule:
    """Realise a stimulus as shattered valve commands with flow compensation.

    Concentration is encoded as the shattering duty cycle of the odour valves.
    Duty that is not a whole number of sub-ticks per 2 ms window is realised by
    error diffusion across windows, so the mean duty is exact and each window
    is off by at most one sub-tick. Carriers absorb the complementary duty;
    when one manifold's odour valves exceed its budget (two odours pulsing
    together on the same manifold), the remainder is taken from the other
    manifold's carrier so total flow stays constant.
    """
    spec.validate()
    if total_ms is None:
        total_ms = spec.onset_time_ms + spec.pulse_duration_ms + 500.0
    n_win = int(math.ceil(total_ms / SHATTER_MS))
    n_sub = n_win * SUBTICKS_PER_WINDOW
    open_ = np.zeros((len(VALVE_NAMES), n_sub), dtype=bool)

    windows = _pulse_windows(spec)
    odour_rows = {od: ODOUR_VALVE[od] for od in windows}
    if len(set(odour_rows.values())) != len(odour_rows):
        raise ScheduleError("duplicate odour in a two-odour stimulus")
    odour_valves = dict(odour_rows)

    # Per-odour open sub-tick counts per window via error diffusion; duty is
    # laid onto sub-ticks that lie inside the commanded pulse so boundaries
    # that bisect a shattering window stay sharp.
    want = spec.concentration * SUBTICKS_PER_WINDOW
    counts = np.zeros((len(VALVE_NAMES), n_win), dtype=np.int64)
    in_pulse = np.zeros((len(VALVE_NAMES), n_sub), dtype=bool)
    for od, spans in windows.items():
        valve = odour_rows[od]
        for s, e in spans:
            lo = int(math.ceil(s / SUBTICK_MS - 1e-9))
            hi = int(math.floor(e / SUBTICK_MS + 1e-9))
            in_pulse[valve, max(lo, 0) : min(hi, n_sub)] = True
        acc = 0.0
        for w in range(n_win):
            base = w * SUBTICKS_PER_WINDOW
            avail = int(in_pulse[valve, base : base + SUBTICKS_PER_WINDOW].sum())
            if avail == 0:
                acc = 0.0
                continue
            acc += want * (avail / SUBTICKS_PER_WINDOW)
            k = int(math.floor(acc + 1e-9))
            k = min(k, avail)
            acc -= k
            counts[valve, w] = k

    # Carriers: fill each manifold up to its budget, spill into the other.
    budget = SUBTICKS_PER_WINDOW
    for w in range(n_win):
        load = [0, 0]
        for valve in range(len(VALVE_NAMES)):
            if not CARRIER_VALVES[valve]:
                load[VALVE_MANIFOLD[valve]] += counts[valve, w]
        spill = [max(0, load[0] - budget), max(0, load[1] - budget)]
        for m, carrier_valve in ((0, 0), (1, 4)):
            other = 1 - m
            c = budget - min(load[m], budget) - spill[other]
            if c < 0:
                raise ScheduleError(
                    f"flow compensation infeasible in window {w}: "
                    f"odour duty exceeds both carriers"
                )
            counts[carrier_valve, w] = c

    # Lay counts out as sub-ticks: odour valves fill their earliest in-pulse
    # sub-ticks of each window, carriers fill from the window end.
    for valve in range(len(VALVE_NAMES)):
        from_end = bool(CARRIER_VALVES[valve])
        for w in range(n_win):
            k = counts[valve, w]
            if k <= 0:
                continue
            base = w * SUBTICKS_PER_WINDOW
            if from_end:
                open_[valve, base + SUBTICKS_PER_WINDOW - k : base + SUBTICKS_PER_WINDOW] = True
            else:
                slots = np.flatnonzero(in_pulse[valve, base : base + SUBTICKS_PER_WINDOW])
                open_[valve, base + slots[:k]] = True

    return ValveSchedule(open=open_, odour_valves=odour_valves, spec=spec)


@dataclass(frozen=True)
class TransportParams:
    """First-order plume transport from valve to sensing site."""

    delay_ms: float = 10.0
    tau_ms: float = 8.0
    gain: float = 1.0


@dataclass
class ConcentrationTrace:
    """Per-odour concentration at the sensing site, 1 kHz, unit = steady
    full-duty open valve."""

    odours: tuple[str, ...]
    values: np.ndarray  # (n_odours, n_ms)
    sample_rate_hz: float = 1000.0

    def get(self, odour: str) -> np.ndarray:
        return self.values[self.odours.index(odour)]


def transport_subtick(
    schedule: ValveSchedule,
    odour: str,
    params: TransportParams,
    delay_wander_ms: np.ndarray | None = None,
) -> np.ndarray:
    """Delayed, low-pass filtered duty of one odour valve on the sub-tick grid.

    ``delay_wander_ms`` optionally adds a per-sub-tick delay fluctuation on
    top of the nominal delay (plume path wander); omitted, the delay is the
    static ``params.delay_ms``.
    """
    valve = schedule.odour_valves[odour]
    duty = schedule.open[valve].astype(np.float64)
    n = duty.shape[0]
    if delay_wander_ms is None:
        shift = int(round(params.delay_ms / schedule.subtick_ms))
        delayed = np.zeros_like(duty)
        if shift < n:
            delayed[shift:] = duty[: n - shift]
    else:
        shifts = np.floor(
            (params.delay_ms + delay_wander_ms) / schedule.subtick_ms + 0.5
        ).astype(np.int64)
        src = np.arange(n) - np.maximum(shifts, 0)
        delayed = np.where(src >= 0, duty[np.clip(src, 0, n - 1)], 0.0)
    return params.gain * first_order_filter(delayed, params.tau_ms, schedule.subtick_ms)


def make_delay_wander(
    n_subticks: int,
    rng: np.random.Generator,
    sigma_ms: float,
    corr_ms: float,
    subtick_ms: float = SUBTICK_MS,
) -> np.ndarray:
    """Ornstein-Uhlenbeck delay fluctuation (zero mean, given std and
    correlation time), one value per sub-tick."""
    if sigma_ms <= 0:
        return np.zeros(n_subticks)
    a = math.exp(-subtick_ms / corr_ms)
    eps = rng.normal(0.0, 1.0, size=n_subticks)
    scale = sigma_ms * math.sqrt(1.0 - a * a) / (1.0 - a)
    return first_order_filter(eps * scale, corr_ms, subtick_ms)


def transport(
    schedule: ValveSchedule,
    params: TransportParams | dict[str, TransportParams] | None = None,
    delay_wander_ms: dict[str, np.ndarray] | None = None,
) -> ConcentrationTrace:
    """Concentration traces at the sensing site for every odour in the schedule.

    The sub-tick trace is decimated to 1 kHz by averaging pairs, which also
    removes the 500 Hz shattering ripple from the sensors' point of view.
    """
    if params is None:
        params = TransportParams()
    odours = tuple(schedule.odour_valves)
    n_ms = schedule.n_subticks // SUBTICKS_PER_MS
    values = np.zeros((len(odours), n_ms))
    for i, od in enumerate(odours):
        p = params[od] if isinstance(params, dict) else params
        wander = delay_wander_ms.get(od) if delay_wander_ms else None
        sub = transport_subtick(schedule, od, p, delay_wander_ms=wander)
        values[i] = sub[: n_ms * SUBTICKS_PER_MS].reshape(n_ms, SUBTICKS_PER_MS).mean(axis=1)
    return ConcentrationTrace(odours=odours, values=values)


def fidelity(
    trace: np.ndarray,
    schedule: ValveSchedule,
    odour: str | None = None,
    delay_ms: float = 0.0,
    sample_rate_hz: float = 1000.0,
) -> tuple[float, float]:
    """Per-pulse squareness of a measured stimulus: (peak-trough)/(peak-baseline).

    One fidelity value per commanded square pulse, aggregated as (mean, std)
    over the pulses of the schedule. ``delay_ms`` shifts the analysis windows
    to compensate for transport lag between command and measurement.
    """
    if odour is None:
        if not schedule.odour_valves:
            raise ScheduleError("schedule contains no odour valves")
        odour = next(iter(schedule.odour_valves))
    spans = schedule.pulse_intervals(odour)
    if not spans:
        raise ScheduleError("no pulses in schedule")
    ms_per_sample = 1000.0 / sample_rate_hz

    def idx(t_ms: float) -> int:
        return int(round((t_ms + delay_ms) / ms_per_sample))

    first = idx(spans[0][0])
    if first <= 0:
        baseline = float(trace[0])
    else:
        baseline = float(np.mean(trace[max(0, first - 200) : first]))

    values = []
    for k, (s, e) in enumerate(spans):
        next_start = spans[k + 1][0] if k + 1 < len(spans) else e + (e - s)
        lo = max(0, idx(s))
        hi = min(trace.shape[0], idx(next_start))
        mid = min(trace.shape[0], max(lo + 1, idx(e)))
        if hi <= lo + 1:
            continue
        peak = float(np.max(trace[lo:hi]))
        trough = float(np.min(trace[mid:hi])) if hi > mid else peak
        denom = peak - baseline
        values.append((peak - trough) / denom if abs(denom) > 1e-12 else 0.0)
    if not values:
        raise ScheduleError("no measurable pulses in trace")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std())
