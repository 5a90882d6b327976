"""Feature pipelines.

Two kinds of features are extracted from sensor recordings:

* Phase-locked windows: one full heater cycle (50 samples at 1 kHz) of raw
  resistance, normalised against a pre-stimulus window of the same channel by

      G = ln(w_t) / max(ln(w_t)) - ln(w_pre) / max(ln(w_pre))

  applied per sensor (natural log; the base cancels nowhere in the ratio and
  only rescales, so it is fixed here and documented).

* Spectral triplets: the sensor trace over the stimulus window is
  (optionally log-) transformed, first-differenced, Fourier transformed, and
  for each sensor the non-DC bin of maximal magnitude yields a
  (frequency, magnitude, phase) triplet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FeatureError
from .fourier import fft

CYCLE_MS = 50
SPECTRAL_TAIL_MS = 100  # analysis window runs to stimulus offset + this


@dataclass(frozen=True)
class PhaseLockedFeature:
    """Normalised one-cycle windows of the cycled sensor bank."""

    values: np.ndarray        # (n_sensors, CYCLE_MS)
    t_ms: int                 # window start, recording time
    cycle_phase_ms: float     # window start relative to odour onset, mod cycle
    t_pre_ms: int             # pre-window anchor

    @property
    def vector(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True)
class SpectralFeature:
    """Dominant DFT triplet per constant-temperature sensor."""

    frequency_hz: np.ndarray
    magnitude: np.ndarray
    phase_rad: np.ndarray
    degenerate: np.ndarray    # bool per sensor: all-zero derivative
    window_ms: tuple[int, int]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(
            [np.array([f, m, p]) for f, m, p in
             zip(self.frequency_hz, self.magnitude, self.phase_rad)]
        )


def extract_window(
    series: np.ndarray, series_start_ms: int, t_ms: int, cycle_ms: int = CYCLE_MS
) -> np.ndarray:
    """Exactly one heater cycle of consecutive samples starting at ``t_ms``.

    Alignment is a contract: ``t_ms`` must sit on a heater-cycle boundary
    (cycles start at multiples of the cycle length on the recording clock).
    """
    if t_ms % cycle_ms != 0:
        raise FeatureError(f"window start {t_ms} ms not on a {cycle_ms} ms cycle boundary")
    i0 = t_ms - series_start_ms
    if i0 < 0 or i0 + cycle_ms > series.shape[0]:
        raise FeatureError(
            f"window [{t_ms}, {t_ms + cycle_ms}) ms outside recorded range"
        )
    return np.asarray(series[i0 : i0 + cycle_ms], dtype=np.float64)


def normalize(window_t: np.ndarray, window_pre: np.ndarray) -> np.ndarray:
    """Pre-stimulus normalisation of one-cycle windows, per sensor.

    Accepts (cycle,) vectors or (n_sensors, cycle) matrices. All resistances
    must be positive and no sensor's log-window may peak at zero (that would
    make the scaling degenerate).
    """
    wt = np.atleast_2d(np.asarray(window_t, dtype=np.float64))
    wp = np.atleast_2d(np.asarray(window_pre, dtype=np.float64))
    if wt.shape != wp.shape:
        raise FeatureError(f"window shapes differ: {wt.shape} vs {wp.shape}")
    if np.any(wt <= 0) or np.any(wp <= 0):
        raise FeatureError("non-positive resistance in window")
    lt = np.log(wt)
    lp = np.log(wp)
    mt = lt.max(axis=1, keepdims=True)
    mp = lp.max(axis=1, keepdims=True)
    if np.any(mt == 0) or np.any(mp == 0):
        raise FeatureError("degenerate window: max(log) is zero")
    g = lt / mt - lp / mp
    return g if np.asarray(window_t).ndim > 1 else g[0]


def phase_locked_feature(
    channels: np.ndarray,
    series_start_ms: int,
    t_ms: int,
    t_pre_ms: int,
    onset_ms: float,
    cycle_ms: int = CYCLE_MS,
) -> PhaseLockedFeature:
    """Normalised feature for all sensors of one bank at window start ``t_ms``."""
    wt = np.stack([extract_window(ch, series_start_ms, t_ms, cycle_ms) for ch in channels])
    wp = np.stack([extract_window(ch, series_start_ms, t_pre_ms, cycle_ms) for ch in channels])
    g = normalize(wt, wp)
    rho = float((t_ms - onset_ms) % cycle_ms)
    return PhaseLockedFeature(values=g, t_ms=t_ms, cycle_phase_ms=rho, t_pre_ms=t_pre_ms)


def spectral_feature(
    channels: np.ndarray,
    sample_rate_hz: float = 1000.0,
    transform: str = "log",
    window_ms: tuple[int, int] = (0, 0),
) -> SpectralFeature:
    """Dominant-peak DFT triplets of already-sliced stimulus windows.

    ``channels`` is (n_sensors, n_samples) covering [onset, offset + tail].
    The derivative is the first difference at the sample rate; the DFT is
    taken without zero padding, so the bin width is sample_rate / (n - 1).
    The zero-frequency bin is excluded from the peak search and only positive
    frequencies (up to Nyquist) compete.
    """
    channels = np.atleast_2d(np.asarray(channels, dtype=np.float64))
    if channels.shape[1] < 2:
        raise FeatureError("spectral window needs at least 2 samples")
    if transform not in ("log", "identity"):
        raise FeatureError(f"unknown transform {transform!r}")
    n_sensors = channels.shape[0]
    freq = np.zeros(n_sensors)
    mag = np.zeros(n_sensors)
    phase = np.zeros(n_sensors)
    degen = np.zeros(n_sensors, dtype=bool)
    for s in range(n_sensors):
        x = channels[s]
        if transform == "log":
            if np.any(x <= 0):
                raise FeatureError("non-positive resistance under log transform")
            x = np.log(x)
        d = np.diff(x)
        if not np.any(d):
            degen[s] = True
            continue
        spectrum = fft(d)
        n = d.shape[0]
        half = n // 2
        mags = np.abs(spectrum[1 : half + 1])
        k = int(np.argmax(mags)) + 1
        freq[s] = k * sample_rate_hz / n
        mag[s] = mags[k - 1]
        # Phase reported on [-pi/2, 3pi/2): responses locked to the stimulus
        # onset cluster near +-pi, so the wrap point is kept away from them.
        ph = float(np.angle(spectrum[k]))
        phase[s] = ph + 2.0 * np.pi if ph < -np.pi / 2 else ph
    return SpectralFeature(
        frequency_hz=freq, magnitude=mag, phase_rad=phase, degenerate=degen,
        window_ms=window_ms,
    )


# ---------------------------------------------------------------------------
# CSV export of feature tables

def _fmt(x: float) -> str:
    return repr(float(x))


def write_phase_features(path, rows: list[tuple[str, str, int, np.ndarray]]) -> None:
    """Rows of (feature_id, trial_id, t_ms, g-vector)."""
    if not rows:
        raise FeatureError("no features to write")
    width = rows[0][3].shape[0]
    header = "feature_id,trial_id,t_ms," + ",".join(f"g_{i}" for i in range(width))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for fid, tid, t_ms, vec in rows:
            if vec.shape[0] != width:
                raise FeatureError("inconsistent feature width")
            fh.write(f"{fid},{tid},{t_ms}," + ",".join(_fmt(v) for v in vec) + "\n")


def write_spectral_features(path, rows: list[tuple[str, str, int, np.ndarray]]) -> None:
    """Rows of (feature_id, trial_id, t_ms, 12-dim triplet vector)."""
    if not rows:
        raise FeatureError("no features to write")
    n_sensors = rows[0][3].shape[0] // 3
    cols = []
    for s in range(n_sensors):
        cols += [f"s{s}_freq", f"s{s}_mag", f"s{s}_phase"]
    with open(path, "w") as fh:
        fh.write("feature_id,trial_id,t_ms," + ",".join(cols) + "\n")
        for fid, tid, t_ms, vec in rows:
            fh.write(f"{fid},{tid},{t_ms}," + ",".join(_fmt(v) for v in vec) + "\n")


def read_feature_table(path) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
    """Returns (feature_ids, trial_ids, t_ms, matrix)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["feature_id", "trial_id", "t_ms"]:
            raise FeatureError(f"not a feature table: {path}")
        fids, tids, ts, vals = [], [], [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            fids.append(parts[0])
            tids.append(parts[1])
            ts.append(int(parts[2]))
            vals.append([float(v) for v in parts[3:]])
    return fids, tids, np.asarray(ts, dtype=np.int64), np.asarray(vals, dtype=np.float64)
