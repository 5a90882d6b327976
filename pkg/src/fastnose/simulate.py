"""Experiment protocols: trial randomisation, the coupled
stimulus/plant/controller simulation at 1 ms ticks, and recording output.

Three heater conditions are supported:

  A: all 8 sensors cycle 150<->400 C with a 50 ms period,
  B: sensors 1-4 hold 400 C, sensors 5-8 cycle 50 ms,
  C: sensors 1-4 hold 400 C, sensors 5-8 cycle 200 ms (generated, unused).

Every trial gets a fine-simulated window; the 30 s recovery gaps between
trials are stepped at a coarse stride (gap dynamics only need to keep the
controller adapted and let surface coverage decay). Trial order, stimulus
jitter and every noise draw derive from the master seed, so a (protocol,
seed) pair reproduces byte-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .config import Config, load_config
from .errors import ProtocolError
from .heater_control import CalibrationMap, calibrate
from .olfactometer import (
    BLANK,
    ODOURS,
    StimulusSpec,
    TransportParams,
    build_schedule,
    make_delay_wander,
    transport,
)
from .recordings import (
    Recording,
    TrialRecord,
    recording_path,
    write_manifest,
    write_recording,
)
from .sensor_physics import (
    AdcParams,
    N_SENSORS,
    PidParams,
    SensorTable,
    load_sensor_params,
    pid_response,
)

ODOUR_INDEX = {od: i for i, od in enumerate(ODOURS)}

PROTOCOL_NAMES = ("A", "B", "C")
PULSE_DURATIONS_MS = (10, 20, 50, 100, 200, 500)
CONCENTRATION_PCTS = (20, 40, 60, 80)
TRAIN_FREQS = (1, 2, 5, 10, 20, 40, 60)
BASE_REPS = {"pulses": 50, "concentration": 20, "short": 5, "trains": 5}


@dataclass(frozen=True)
class BankProfile:
    mode: str          # "cycle" or "hold"
    cycle_ms: int      # full cycle length (cycle mode)
    step_ms: int
    low_c: float
    high_c: float

    @property
    def targets(self) -> tuple[float, ...]:
        return (self.high_c,) if self.mode == "hold" else (self.low_c, self.high_c)

    def target_at(self, t_ms: int) -> float:
        if self.mode == "hold":
            return self.high_c
        return self.low_c if (t_ms % self.cycle_ms) < self.cycle_ms // 2 else self.high_c


def parse_cycle_profile(cfg: Config) -> list[tuple[float, int]]:
    """(temperature_c, duration_ms) segments of one heater cycle."""
    out = []
    for item in cfg.getlist("controller", "cycle_profile"):
        t, _, d = item.partition(":")
        out.append((float(t), int(d)))
    if len(out) != 2 or out[0][1] != out[1][1]:
        raise ProtocolError("cycle_profile must hold two equal-length segments")
    return out


def bank_profile(protocol: str, sensor_id: int, cfg: Config) -> BankProfile:
    (low, step), (high, _) = parse_cycle_profile(cfg)
    hold = cfg.getfloat("controller", "hold_c")
    cycle = BankProfile("cycle", 2 * step, step, low, high)
    # experiment C's second bank runs the same profile stretched 4x
    cycle_slow = BankProfile("cycle", 8 * step, 4 * step, low, high)
    hold_p = BankProfile("hold", 0, 25, hold, hold)
    if protocol == "A":
        return cycle
    if protocol == "B":
        return hold_p if sensor_id <= 4 else cycle
    if protocol == "C":
        return hold_p if sensor_id <= 4 else cycle_slow
    raise ProtocolError(f"unknown protocol {protocol!r}")


def cycled_sensors(protocol: str) -> list[int]:
    return list(range(1, 9)) if protocol == "A" else [5, 6, 7, 8]


def constant_sensors(protocol: str) -> list[int]:
    return [] if protocol == "A" else [1, 2, 3, 4]


@dataclass
class PlantScalars:
    tau_th_ms: float
    gain_c_per_w: float
    r0: float
    alpha: float
    t0: float
    t_amb0: float
    amb_amp: float
    amb_omega: float
    amb_phase: float
    r_sense: float
    lag_coeff: float

    @classmethod
    def from_config(cls, cfg: Config, amb_phase: float) -> "PlantScalars":
        period_ms = cfg.getfloat("plant", "ambient_drift_period_s") * 1000.0
        lag_ticks = cfg.getfloat("plant", "dac_lag_ticks")
        return cls(
            tau_th_ms=cfg.getfloat("plant", "tau_thermal_ms"),
            gain_c_per_w=cfg.getfloat("plant", "thermal_gain_c_per_w"),
            r0=cfg.getfloat("plant", "heater_r0_ohm"),
            alpha=cfg.getfloat("plant", "heater_alpha_per_c"),
            t0=cfg.getfloat("plant", "heater_t0_c"),
            t_amb0=cfg.getfloat("plant", "t_ambient_c"),
            amb_amp=cfg.getfloat("plant", "ambient_drift_amp_c"),
            amb_omega=(2.0 * math.pi / period_ms) if period_ms > 0 else 0.0,
            amb_phase=amb_phase,
            r_sense=cfg.getfloat("controller", "r_sense_ohm"),
            lag_coeff=1.0 - math.exp(-1.0 / lag_ticks) if lag_ticks > 0 else 1.0,
        )

    def r_heat(self, t_c: float) -> float:
        return self.r0 * (1.0 + self.alpha * (t_c - self.t0))


def settle_open_loop(plant: PlantScalars, v_dac: float, n_ms: int = 600) -> tuple[float, float]:
    """Drive a constant voltage until thermal steady state; returns (P, R_heat).

    Used by the calibration power sweep: readings are taken settled and
    noiseless, mimicking the bench procedure.
    """
    temp = plant.t_amb0
    decay = math.exp(-1.0 / plant.tau_th_ms)
    for _ in range(n_ms):
        r_heat = plant.r_heat(temp)
        i = v_dac / (r_heat + plant.r_sense)
        p = i * i * r_heat
        t_ss = plant.t_amb0 + plant.gain_c_per_w * p
        temp = t_ss + (temp - t_ss) * decay
    r_heat = plant.r_heat(temp)
    i = v_dac / (r_heat + plant.r_sense)
    return i * i * r_heat, r_heat


def calibrate_channel(
    plant: PlantScalars,
    table: SensorTable,
    targets_c: list[float],
    sweep_v: tuple[float, ...] = (0.8, 1.2, 1.6, 2.0, 2.4),
) -> CalibrationMap:
    """Power-step calibration of one channel against the datasheet anchor."""
    log = [settle_open_loop(plant, v) for v in sweep_v]
    return calibrate(
        log, table.p_nom_w, table.dt_nom_c, plant.t_amb0, plant.r_sense, targets_c
    )


@dataclass
class ChannelSim:
    """Mutable per-sensor simulation state shared across trials and gaps."""

    sensor_id: int
    profile: BankProfile
    cal: CalibrationMap
    beta_max: np.ndarray
    t_opt: np.ndarray
    w_c: np.ndarray
    tau_ads: np.ndarray
    tau_des: np.ndarray
    a_s: float
    b_s: float
    pstate: np.ndarray   # [hotplate T, lagged voltage]
    theta: np.ndarray    # coverage per odour in ODOURS order
    vhold: np.ndarray    # [commanded voltage]
    kstate: np.ndarray   # [r_est, variance]

    def map_index(self, target_c: float) -> int:
        return int(np.argmin(np.abs(self.cal.dt_targets_c - (target_c - self.cal.t_ref_c))))


def _make_channel(sensor_id: int, protocol: str, plant: PlantScalars,
                  table: SensorTable, cfg: Config) -> ChannelSim:
    profile = bank_profile(protocol, sensor_id, cfg)
    cal = calibrate_channel(plant, table, list(profile.targets))
    layer = table.sensors[sensor_id - 1]
    idx = [layer.odours.index(od) for od in ODOURS]
    return ChannelSim(
        sensor_id=sensor_id,
        profile=profile,
        cal=cal,
        beta_max=layer.beta_max[idx].copy(),
        t_opt=layer.t_opt_c[idx].copy(),
        w_c=layer.w_c[idx].copy(),
        tau_ads=layer.tau_ads_ms[idx].copy(),
        tau_des=layer.tau_des_ms[idx].copy(),
        a_s=layer.a_s,
        b_s=layer.b_s,
        pstate=np.array([plant.t_amb0, 0.0]),
        theta=np.zeros(len(ODOURS)),
        vhold=np.array([0.0]),
        kstate=np.array([plant.r_heat(plant.t_amb0), 1.0]),
    )


def _gap_plan(ch: ChannelSim, t0_ms: int, gap_ms: int) -> tuple[np.ndarray, np.ndarray, int]:
    step = ch.profile.step_ms if ch.profile.mode == "cycle" else 25
    n_steps = gap_ms // step
    targets = np.empty(n_steps)
    idx = np.empty(n_steps, dtype=np.int64)
    for s in range(n_steps):
        tgt = ch.profile.target_at(t0_ms + s * step)
        targets[s] = tgt
        idx[s] = ch.map_index(tgt)
    return targets, idx, step


def _run_gap(ch: ChannelSim, plant: PlantScalars, t0_ms: int, gap_ms: int,
             stride_cfg_ms: float, adapt_gain: float, dac_lsb: float, dac_levels: int,
             kq: float, ksig0sq: float) -> None:
    targets, idx, step = _gap_plan(ch, t0_ms, gap_ms)
    n_strides = max(1, round(step / stride_cfg_ms))
    stride = step / n_strides
    _kernels.simulate_gap(
        len(targets), float(step), stride,
        plant.tau_th_ms, plant.gain_c_per_w, plant.r0, plant.alpha, plant.t0,
        plant.t_amb0, plant.amb_amp, plant.amb_omega, plant.amb_phase,
        float(t0_ms), plant.r_sense,
        targets, idx, ch.cal.v_dac,
        ch.cal.slope_c_per_ohm, ch.cal.intercept_c,
        adapt_gain, dac_lsb, dac_levels,
        kq, ksig0sq, ch.kstate, ch.tau_des, ch.pstate, ch.theta, ch.vhold,
    )


def _fine_step_plan(
    ch: ChannelSim, seg_start: int, window_ms: int, onset_local: int, offset_local: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Controller step plan for one fine-simulated segment (tick-relative)."""
    prof = ch.profile
    starts, lens, targets = [], [], []
    if prof.mode == "cycle":
        step = prof.step_ms
        for t in range(0, window_ms, step):
            starts.append(t)
            lens.append(step)
            targets.append(prof.target_at(seg_start + t))
    else:
        step = prof.step_ms
        f0 = max(step, (onset_local - 50) // step * step)
        f1 = min(window_ms, int(math.ceil((offset_local + 1150) / step)) * step)
        for t in range(0, f0, step):
            starts.append(t)
            lens.append(step)
            targets.append(prof.high_c)
        starts.append(f0)
        lens.append(f1 - f0)
        targets.append(prof.high_c)
        for t in range(f1, window_ms, step):
            starts.append(t)
            lens.append(step)
            targets.append(prof.high_c)
    starts = np.asarray(starts, dtype=np.int64)
    lens = np.asarray(lens, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    adapt = np.ones(len(starts), dtype=np.uint8)
    idx = np.asarray([ch.map_index(t) for t in targets], dtype=np.int64)
    return starts, lens, targets, adapt, idx


def simulate_single_channel(
    cfg: Config | None = None,
    sensor_id: int = 1,
    protocol: str = "A",
    n_ms: int = 5000,
    conc: np.ndarray | None = None,
    seed: int = 0,
    backend=None,
    tau_thermal_ms: float | None = None,
    noiseless: bool = False,
) -> dict:
    """Drive one sensor channel open-bench style (no trial scheduling).

    Returns the raw simulation traces; used by unit tests, the acceptance
    suite and the kernel benchmark.
    """
    cfg = cfg or load_config()
    kern = backend or _kernels
    plant = PlantScalars.from_config(cfg, amb_phase=0.0)
    if tau_thermal_ms is not None:
        plant.tau_th_ms = tau_thermal_ms
    table = load_sensor_params()
    ch = _make_channel(sensor_id, protocol, plant, table, cfg)
    starts, lens, targets, adapt, idx = _fine_step_plan(ch, 0, n_ms, n_ms, n_ms)
    if ch.profile.mode == "hold":
        starts, lens, targets, adapt, idx = _fine_step_plan(ch, 0, n_ms, n_ms - 50, n_ms - 50)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBE)))
    meas_noise = rng.normal(0.0, cfg.getfloat("plant", "r_readout_noise_ohm"), n_ms)
    log_noise = rng.normal(0.0, cfg.getfloat("plant", "sensor_noise_sigma_log10"), n_ms)
    if noiseless:
        meas_noise[:] = 0.0
        log_noise[:] = 0.0
    if conc is None:
        conc = np.zeros((len(ODOURS), n_ms))
    adc = AdcParams(
        full_scale_ohm=cfg.getfloat("plant", "sensor_full_scale_ohm"),
        bits=cfg.getint("plant", "sensor_adc_bits"),
    )
    r = np.empty(n_ms)
    t_rec = np.empty(n_ms)
    t_true = np.empty(n_ms)
    v_cmd = np.empty(n_ms)
    kern.simulate_channel(
        n_ms,
        plant.tau_th_ms, plant.gain_c_per_w, plant.r0, plant.alpha, plant.t0,
        plant.t_amb0, plant.amb_amp, plant.amb_omega, plant.amb_phase,
        0.0, plant.r_sense, plant.lag_coeff,
        starts, lens, targets, adapt, idx,
        ch.cal.v_dac, ch.cal.slope_c_per_ohm, ch.cal.intercept_c,
        cfg.getfloat("controller", "adapt_gain_v_per_degc_s"),
        cfg.getfloat("controller", "dac_lsb_v"), cfg.getint("controller", "dac_levels"),
        cfg.getfloat("controller", "kalman_q"),
        cfg.getfloat("controller", "kalman_sigma0") ** 2,
        cfg.getfloat("controller", "kalman_kt"),
        ch.kstate, meas_noise,
        ch.beta_max, ch.t_opt, ch.w_c, ch.tau_ads, ch.tau_des,
        ch.a_s, ch.b_s, conc, log_noise,
        adc.inv_lsb, (1 << adc.bits) - 1,
        ch.pstate, ch.theta, ch.vhold,
        r, t_rec, t_true, v_cmd,
    )
    return {
        "r": r, "t_rec": t_rec, "t_true": t_true, "v_cmd": v_cmd,
        "channel": ch, "plant": plant,
        "step_starts": starts, "step_targets": targets,
    }


def stimulus_list(cfg: Config) -> list[dict]:
    """The (unshuffled) stimulus set of one experiment, scaled by protocol.scale."""
    scale = cfg.getfloat("protocol", "scale")
    sets = set(cfg.getlist("protocol", "sets"))
    reps = {k: max(1, round(v * scale)) for k, v in BASE_REPS.items()}
    out: list[dict] = []

    def add(odour_a, odour_b, duration, conc_pct, freq, mode):
        out.append(dict(
            odour_a=odour_a, odour_b=odour_b, duration_ms=duration,
            concentration_pct=conc_pct, frequency_hz=float(freq), mode=mode,
        ))

    if "pulses" in sets:
        for _ in range(reps["pulses"]):
            for od in list(ODOURS) + [BLANK, "blank2"]:
                add(od, "", 1000, 100, 0, "single")
    if "concentration" in sets:
        for _ in range(reps["concentration"]):
            for od in ODOURS:
                for pct in CONCENTRATION_PCTS:
                    add(od, "", 1000, pct, 0, "single")
    if "short" in sets:
        for _ in range(reps["short"]):
            for od in ODOURS:
                for dur in PULSE_DURATIONS_MS:
                    add(od, "", dur, 100, 0, "single")
    if "trains" in sets:
        pairs = [(a, b) for i, a in enumerate(ODOURS) for b in ODOURS[i + 1:]]
        for _ in range(reps["trains"]):
            for a, b in pairs:
                for f in TRAIN_FREQS:
                    add(a, b, 1000, 100, f, "anti-correlated")
                    add(b, a, 1000, 100, f, "anti-correlated")
            for a, b in pairs:
                for f in TRAIN_FREQS:
                    add(a, b, 1000, 100, f, "correlated")
    if not out:
        raise ProtocolError(f"no stimulus sets selected from {sets}")
    return out


def build_trials(protocol: str, cfg: Config, master_seed: int) -> list[TrialRecord]:
    """Randomised, timestamped trial list (the manifest content)."""
    stimuli = stimulus_list(cfg)
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, 0xA11)))
    order = rng.permutation(len(stimuli))
    gap = cfg.getint("protocol", "recovery_gap_ms")
    window = cfg.getint("protocol", "trial_window_ms")
    pre_roll = cfg.getint("protocol", "pre_roll_ms")
    jitter_span = cfg.getint("protocol", "onset_jitter_ms")
    trials = []
    seg_start = gap
    for i, j in enumerate(order):
        st = stimuli[j]
        jitter = int(rng.integers(0, jitter_span)) if jitter_span > 0 else 0
        onset = seg_start + pre_roll + jitter
        trial_seed = int(np.random.SeedSequence((master_seed, i)).generate_state(1)[0])
        trials.append(TrialRecord(
            trial_id=f"{protocol}{i:04d}",
            odour_a=st["odour_a"], odour_b=st["odour_b"],
            duration_ms=st["duration_ms"], concentration_pct=st["concentration_pct"],
            frequency_hz=st["frequency_hz"], mode=st["mode"],
            onset_ms=onset, seed=trial_seed,
        ))
        seg_start += window + gap
    return trials


def _trial_stimulus(trial: TrialRecord, onset_local: int) -> StimulusSpec:
    odours = (trial.odour_a,) if trial.mode == "single" else (trial.odour_a, trial.odour_b)
    return StimulusSpec(
        odours=odours,
        pulse_duration_ms=float(trial.duration_ms),
        concentration=trial.concentration_pct / 100.0,
        modulation_frequency_hz=trial.frequency_hz,
        correlation_mode=trial.mode,
        onset_time_ms=float(onset_local),
    )


def run_protocol(
    protocol: str,
    seed: int,
    out_dir: str | Path,
    cfg: Config | None = None,
    fmt: str = "csv",
    params_path: str | Path | None = None,
    progress=None,
) -> list[TrialRecord]:
    """Simulate one experiment end to end; the manifest is written last."""
    if protocol not in PROTOCOL_NAMES:
        raise ProtocolError(f"protocol must be one of {PROTOCOL_NAMES}")
    if fmt not in ("csv", "npz"):
        raise ProtocolError(f"recording format must be csv or npz, not {fmt!r}")
    cfg = cfg or load_config()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = load_sensor_params(params_path)

    master_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA0)))
    amb_phase = float(master_rng.uniform(0.0, 2.0 * math.pi))
    plant = PlantScalars.from_config(cfg, amb_phase)
    channels = [_make_channel(s, protocol, plant, table, cfg) for s in range(1, N_SENSORS + 1)]

    trials = build_trials(protocol, cfg, seed)
    window = cfg.getint("protocol", "trial_window_ms")
    pre_roll = cfg.getint("protocol", "pre_roll_ms")
    gap_stride = cfg.getfloat("protocol", "gap_stride_ms")
    adapt_gain = cfg.getfloat("controller", "adapt_gain_v_per_degc_s")
    dac_lsb = cfg.getfloat("controller", "dac_lsb_v")
    dac_levels = cfg.getint("controller", "dac_levels")
    kq = cfg.getfloat("controller", "kalman_q")
    ksig0 = cfg.getfloat("controller", "kalman_sigma0")
    kkt = cfg.getfloat("controller", "kalman_kt")
    meas_sigma = cfg.getfloat("plant", "r_readout_noise_ohm")
    log_sigma = cfg.getfloat("plant", "sensor_noise_sigma_log10")
    drift_sigma = cfg.getfloat("plant", "baseline_drift_sigma_log10")
    delay0 = cfg.getfloat("plant", "transport_delay_ms")
    tau_tr = cfg.getfloat("plant", "transport_tau_ms")
    delay_jit = cfg.getfloat("plant", "transport_delay_jitter_ms")
    gain_jit = cfg.getfloat("plant", "transport_gain_jitter")
    turb_sigma = cfg.getfloat("plant", "turbulence_sigma_ms")
    turb_corr = cfg.getfloat("plant", "turbulence_corr_ms")
    pid = PidParams(
        tau_ms=cfg.getfloat("plant", "pid_tau_ms"),
        gains=cfg.getmap("plant", "pid_gains"),
        noise_v=cfg.getfloat("plant", "pid_noise_v"),
        baseline_v=cfg.getfloat("plant", "pid_baseline_v"),
    )
    adc = AdcParams(
        full_scale_ohm=cfg.getfloat("plant", "sensor_full_scale_ohm"),
        bits=cfg.getint("plant", "sensor_adc_bits"),
    )

    gap = cfg.getint("protocol", "recovery_gap_ms")
    t_cursor = 0
    for n_done, trial in enumerate(trials):
        seg_start = gap + n_done * (window + gap)
        seg_end = seg_start + window
        gap_ms = seg_start - t_cursor
        for ch in channels:
            _run_gap(ch, plant, t_cursor, gap_ms, gap_stride,
                     adapt_gain, dac_lsb, dac_levels, kq, ksig0 * ksig0)

        onset_local = trial.onset_ms - seg_start
        offset_local = onset_local + trial.duration_ms
        spec = _trial_stimulus(trial, onset_local)
        schedule = build_schedule(spec, total_ms=window)

        trial_rng = np.random.default_rng(np.random.SeedSequence((trial.seed, 100)))
        tparams = {}
        wander = {}
        for od in schedule.odour_valves:
            d = float(np.clip(delay0 + trial_rng.normal(0.0, delay_jit), 3.0, 28.0))
            g = float(np.clip(1.0 + trial_rng.normal(0.0, gain_jit), 0.5, 1.5))
            tparams[od] = TransportParams(delay_ms=d, tau_ms=tau_tr, gain=g)
            wander[od] = make_delay_wander(
                schedule.n_subticks, trial_rng, turb_sigma, turb_corr
            )
        trace = transport(schedule, tparams, delay_wander_ms=wander)

        conc = np.zeros((len(ODOURS), window))
        for i, od in enumerate(trace.odours):
            if od.startswith(BLANK):
                continue
            conc[ODOUR_INDEX[od]] = trace.values[i]

        drift = trial_rng.normal(0.0, drift_sigma, size=N_SENSORS)

        r_mat = np.empty((window, N_SENSORS))
        t_mat = np.empty((window, N_SENSORS))
        scratch_true = np.empty(window)
        scratch_v = np.empty(window)
        for c_idx, ch in enumerate(channels):
            starts, lens, targets, adapt, idx = _fine_step_plan(
                ch, seg_start, window, onset_local, offset_local
            )
            ch_rng = np.random.default_rng(np.random.SeedSequence((trial.seed, 1, c_idx)))
            meas_noise = ch_rng.normal(0.0, meas_sigma, size=window)
            log_noise = ch_rng.normal(0.0, log_sigma, size=window)
            _kernels.simulate_channel(
                window,
                plant.tau_th_ms, plant.gain_c_per_w, plant.r0, plant.alpha, plant.t0,
                plant.t_amb0, plant.amb_amp, plant.amb_omega, plant.amb_phase,
                float(seg_start), plant.r_sense, plant.lag_coeff,
                starts, lens, targets, adapt, idx,
                ch.cal.v_dac, ch.cal.slope_c_per_ohm, ch.cal.intercept_c,
                adapt_gain, dac_lsb, dac_levels,
                kq, ksig0 * ksig0, kkt, ch.kstate, meas_noise,
                ch.beta_max, ch.t_opt, ch.w_c, ch.tau_ads, ch.tau_des,
                ch.a_s + drift[c_idx], ch.b_s,
                conc, log_noise,
                adc.inv_lsb, (1 << adc.bits) - 1,
                ch.pstate, ch.theta, ch.vhold,
                r_mat[:, c_idx], t_mat[:, c_idx], scratch_true, scratch_v,
            )

        pid_noise = np.random.default_rng(
            np.random.SeedSequence((trial.seed, 2))
        ).normal(0.0, pid.noise_v, size=window)
        pid_v = pid_response(trace, pid, noise=pid_noise)
        pid_v = np.floor(pid_v * 1e5 + 0.5) / 1e5

        open_ms = schedule.open[:, ::2]
        mask = np.zeros(window, dtype=np.int64)
        for v in range(open_ms.shape[0]):
            mask |= open_ms[v, :window].astype(np.int64) << v
        flow_rng = np.random.default_rng(np.random.SeedSequence((trial.seed, 3)))
        duty = schedule.open[:, : window * 2].astype(np.float64)
        flow = duty.reshape(duty.shape[0], window, 2).mean(axis=2).sum(axis=0)
        flow = flow + flow_rng.normal(0.0, 1e-3, size=window)
        flow = np.floor(flow * 1e4 + 0.5) / 1e4

        rec = Recording(
            header={
                "format_version": "1",
                "protocol": protocol,
                "seed": str(seed),
                "params_digest": table.digest,
                "trial_id": trial.trial_id,
                "trial_seed": str(trial.seed),
                "onset_ms": str(trial.onset_ms),
                "duration_ms": str(trial.duration_ms),
            },
            t_ms=np.arange(seg_start, seg_end, dtype=np.int64),
            r=r_mat,
            t_hot=t_mat,
            valve_mask=mask,
            pid_v=pid_v,
            flow_au=flow,
        )
        write_recording(recording_path(out_dir, trial.trial_id, fmt), rec)
        t_cursor = seg_end
        if progress is not None:
            progress(n_done + 1, len(trials))

    write_manifest(out_dir / "manifest.csv", trials)
    info = out_dir / "run_info.txt"
    info.write_text(
        f"protocol = {protocol}\nseed = {seed}\nparams_digest = {table.digest}\n\n"
        f"{cfg.dump()}"
    )
    return trials
