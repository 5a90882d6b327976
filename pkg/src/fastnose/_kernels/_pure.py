"""Pure-Python twin of the compiled channel kernel.

Keep arithmetic order identical to ``_core.pyx``: both backends must produce
bit-identical outputs (IEEE doubles, same libm calls, same sequence of
operations), which the test suite asserts.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "pure"

LN10 = math.log(10.0)


def first_order_filter(x: np.ndarray, tau: float, dt: float, state: float = 0.0) -> np.ndarray:
    """Exact exponential first-order low-pass for piecewise-constant input."""
    y = np.empty(x.shape[0], dtype=np.float64)
    if tau <= 0.0:
        y[:] = x
        return y
    b = 1.0 - math.exp(-dt / tau)
    s = state
    for i in range(x.shape[0]):
        s = s + b * (x[i] - s)
        y[i] = s
    return y


def simulate_channel(
    n_ticks: int,
    # plant
    tau_th_ms: float,
    gain_c_per_w: float,
    r0: float,
    alpha: float,
    t0: float,
    t_amb0: float,
    amb_amp: float,
    amb_omega: float,   # rad per ms
    amb_phase: float,
    t_start_ms: float,  # global time of tick 0, for the ambient drift phase
    r_sense: float,
    lag_coeff: float,
    # controller step plan
    step_start,         # int64[n_steps], tick index
    step_len,           # int64[n_steps]
    step_target,        # float64[n_steps], absolute degC
    step_adapt,         # uint8[n_steps]
    step_map_idx,       # int64[n_steps]
    map_v,              # float64[n_map], mutated in place
    slope: float,
    intercept: float,
    adapt_gain: float,
    dac_lsb: float,
    dac_levels: int,
    # kalman
    kq: float,
    ksig0sq: float,
    kkt: float,
    kstate,             # float64[2]: r_est, variance (mutated)
    meas_noise,         # float64[n_ticks]
    # sensing layer
    beta_max,           # float64[n_od]
    t_opt,
    w_c,
    tau_ads,
    tau_des,
    a_s: float,
    b_s: float,
    conc,               # float64[n_od, n_ticks]
    log_noise,          # float64[n_ticks]
    adc_inv_lsb: float,  # levels per ohm; recorded R = n / adc_inv_lsb
    adc_max_n: int,
    # mutable channel state
    pstate,             # float64[2]: hotplate T, lagged actual voltage
    theta,              # float64[n_od] coverage (mutated)
    vhold,              # float64[1]: current commanded voltage (mutated)
    # outputs
    r_out,
    t_rec_out,
    t_true_out,
    v_cmd_out,
) -> None:
    n_od = beta_max.shape[0]
    n_steps = step_start.shape[0]
    e_th = math.exp(-1.0 / tau_th_ms)
    temp = pstate[0]
    v_act = pstate[1]
    v_cmd = vhold[0]
    r_est = kstate[0]
    variance = kstate[1]

    si = 0
    cur_end = -1
    cur_target = 0.0
    cur_adapt = 0
    cur_idx = 0
    cur_len = 0

    for k in range(n_ticks):
        dv = 0.0
        if si < n_steps and k == step_start[si]:
            cur_target = step_target[si]
            cur_adapt = step_adapt[si]
            cur_idx = step_map_idx[si]
            cur_len = step_len[si]
            cur_end = k + cur_len
            v_new = map_v[cur_idx]
            n = math.floor(v_new / dac_lsb + 0.5)
            if n < 0:
                n = 0
            elif n > dac_levels - 1:
                n = dac_levels - 1
            v_new = n * dac_lsb
            dv = v_new - v_cmd
            v_cmd = v_new
            si += 1

        # DAC/amplifier settling (first-order lag on the commanded voltage)
        v_act = v_act + lag_coeff * (v_cmd - v_act)

        # Electrical model and exact thermal update over one tick
        r_heat = r0 * (1.0 + alpha * (temp - t0))
        i_heat = v_act / (r_heat + r_sense)
        p_heat = i_heat * i_heat * r_heat
        t_amb = t_amb0 + amb_amp * math.sin(amb_omega * (t_start_ms + k) + amb_phase)
        t_ss = t_amb + gain_c_per_w * p_heat
        temp = t_ss + (temp - t_ss) * e_th

        # Raw readout uses the commanded voltage: lag shows up as a transient
        # resistance error right after each DAC step.
        variance = variance + kq
        if i_heat > 0.0:
            r_raw = v_cmd / i_heat - r_sense + meas_noise[k]
            mv = ksig0sq + (kkt * dv) * (kkt * dv)
            g = variance / (variance + mv)
            r_est = r_est + g * (r_raw - r_est)
            variance = (1.0 - g) * variance

        # One proportional map correction per completed step
        if k == cur_end - 1 and cur_adapt != 0:
            t_ach = slope * r_est + intercept
            map_v[cur_idx] += adapt_gain * (cur_target - t_ach) * (cur_len / 1000.0)

        # Sensing layer: coverage kinetics then log-resistance law
        lr = a_s + b_s * temp
        for o in range(n_od):
            c = conc[o, k]
            rate = c / tau_ads[o] + (1.0 - c) / tau_des[o]
            ss = (c / tau_ads[o]) / rate
            theta[o] = ss + (theta[o] - ss) * math.exp(-rate)
            arg = (temp - t_opt[o]) / w_c[o]
            lr -= beta_max[o] * math.exp(-arg * arg) * theta[o]
        lr += log_noise[k]
        r = math.exp(lr * LN10)
        # Quantise onto a decimal-exact grid (division keeps the value equal
        # to what a decimal text round-trip parses back).
        n = math.floor(r * adc_inv_lsb + 0.5)
        if n < 0:
            n = 0
        elif n > adc_max_n:
            n = adc_max_n
        r_out[k] = n / adc_inv_lsb

        t_rec = slope * r_est + intercept
        t_rec_out[k] = math.floor(t_rec * 100.0 + 0.5) / 100.0
        t_true_out[k] = temp
        v_cmd_out[k] = v_cmd

    pstate[0] = temp
    pstate[1] = v_act
    vhold[0] = v_cmd
    kstate[0] = r_est
    kstate[1] = variance


def simulate_gap(
    n_steps: int,
    step_ms: float,
    stride_ms: float,
    # plant
    tau_th_ms: float,
    gain_c_per_w: float,
    r0: float,
    alpha: float,
    t0: float,
    t_amb0: float,
    amb_amp: float,
    amb_omega: float,
    amb_phase: float,
    t_start_ms: float,
    r_sense: float,
    # controller
    target_seq,         # float64[n_steps] absolute degC
    target_idx,         # int64[n_steps]
    map_v,
    slope: float,
    intercept: float,
    adapt_gain: float,
    dac_lsb: float,
    dac_levels: int,
    # kalman
    kq: float,
    ksig0sq: float,
    kstate,
    # sensing decay
    tau_des,
    # mutable state
    pstate,
    theta,
    vhold,
) -> None:
    """Coarse-stride recovery-gap stepping: no stimulus, no noise, no recording.

    Each controller step is integrated in strides of ``stride_ms`` with the
    power recomputed per stride; coverage decays in clean air; the Kalman
    filter sees one settled measurement per stride and the map keeps adapting,
    so the controller stays converged across the 30 s inter-trial gaps.
    """
    if n_steps == 0:
        return
    n_od = theta.shape[0]
    temp = pstate[0]
    r_est = kstate[0]
    t_now = t_start_ms
    n_strides = int(step_ms / stride_ms)
    # Settled posterior variance of the per-tick filter; gap measurements are
    # taken settled and exact, so the estimate simply snaps to the readout.
    p_ss = 0.5 * (-kq + math.sqrt(kq * kq + 4.0 * kq * ksig0sq))

    for s in range(n_steps):
        idx = target_idx[s]
        target = target_seq[s]
        v = map_v[idx]
        n = math.floor(v / dac_lsb + 0.5)
        if n < 0:
            n = 0
        elif n > dac_levels - 1:
            n = dac_levels - 1
        v = n * dac_lsb
        for _ in range(n_strides):
            r_heat = r0 * (1.0 + alpha * (temp - t0))
            i_heat = v / (r_heat + r_sense)
            p_heat = i_heat * i_heat * r_heat
            t_amb = t_amb0 + amb_amp * math.sin(amb_omega * t_now + amb_phase)
            t_ss = t_amb + gain_c_per_w * p_heat
            temp = t_ss + (temp - t_ss) * math.exp(-stride_ms / tau_th_ms)
            if i_heat > 0.0:
                r_est = v / i_heat - r_sense
            for o in range(n_od):
                theta[o] = theta[o] * math.exp(-stride_ms / tau_des[o])
            t_now += stride_ms
        t_ach = slope * r_est + intercept
        map_v[idx] += adapt_gain * (target - t_ach) * (step_ms / 1000.0)

    pstate[0] = temp
    pstate[1] = v
    vhold[0] = v
    kstate[0] = r_est
    kstate[1] = p_ss
