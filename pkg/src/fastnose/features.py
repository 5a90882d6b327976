"""Pipeline from recording directories to feature tables.

Alongside each feature CSV a ``.labels.csv`` sidecar is written carrying the
trial metadata and the training label of every window, so downstream training
and evaluation need only the two files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp_features import (
    CYCLE_MS,
    SPECTRAL_TAIL_MS,
    normalize,
    spectral_feature,
)
from .errors import DataError, FeatureError
from .evaluation import LabelingParams, label_feature
from .recordings import TrialRecord, read_manifest, read_recording, recording_path
from .sensor_physics import load_sensor_params
from .simulate import constant_sensors, cycled_sensors

LABELS_COLUMNS = (
    "feature_id", "trial_id", "t_ms", "t_rel_ms", "label", "odour_a", "odour_b",
    "duration_ms", "concentration_pct", "frequency_hz", "mode", "onset_ms",
)
# Window span extracted around each stimulus, relative to onset.
PHASE_SPAN_MS = (-100, 2000)
T_PRE_MS = -1000


@dataclass
class FeatureSet:
    """In-memory feature table plus per-window metadata."""

    rows: list          # (feature_id, trial_id, t_ms, vector)
    labels: list        # dicts keyed by LABELS_COLUMNS
    mode: str


def _find_recording(run_dir: Path, trial_id: str) -> Path:
    for fmt in ("csv", "npz"):
        p = recording_path(run_dir, trial_id, fmt)
        if p.exists():
            return p
    raise DataError(f"no recording for trial {trial_id} in {run_dir}")


def _check_digest(header: dict, digest: str, path) -> None:
    if header.get("params_digest") != digest:
        raise DataError(
            f"sensor parameter digest mismatch for {path}: recording has "
            f"{header.get('params_digest')}, loaded table is {digest}"
        )


def _label_row(trial: TrialRecord, fid: str, t_ms: int, label: str) -> dict:
    return dict(
        feature_id=fid, trial_id=trial.trial_id, t_ms=t_ms,
        t_rel_ms=t_ms - trial.onset_ms, label=label,
        odour_a=trial.odour_a, odour_b=trial.odour_b,
        duration_ms=trial.duration_ms, concentration_pct=trial.concentration_pct,
        frequency_hz=trial.frequency_hz, mode=trial.mode, onset_ms=trial.onset_ms,
    )


def extract_phase_features(
    run_dir: str | Path,
    params_path: str | Path | None = None,
    t_pre_ms: int = T_PRE_MS,
    span_ms: tuple[int, int] = PHASE_SPAN_MS,
    normalized: bool = True,
) -> FeatureSet:
    """Phase-locked one-cycle features for every window of every trial.

    Windows sit on the heater-cycle grid (multiples of 50 ms on the protocol
    clock) across ``span_ms`` around each onset. The pre-window anchors one
    cycle at ``t_pre_ms`` before the onset, aligned down to the cycle grid.
    ``normalized=False`` yields the raw resistance windows instead, used for
    the normalised-vs-raw comparison.
    """
    run_dir = Path(run_dir)
    trials = read_manifest(run_dir / "manifest.csv")
    digest = load_sensor_params(params_path).digest
    rows, labels = [], []
    bank = None
    for trial in trials:
        rec = read_recording(_find_recording(run_dir, trial.trial_id))
        _check_digest(rec.header, digest, trial.trial_id)
        protocol = rec.header.get("protocol", "A")
        if bank is None:
            bank = cycled_sensors(protocol)
        channels = np.stack([rec.channel(s) for s in bank])
        start = rec.start_ms
        n = channels.shape[1]
        t_pre = (trial.onset_ms + t_pre_ms) // CYCLE_MS * CYCLE_MS
        pre_idx = t_pre - start
        if pre_idx < 0 or pre_idx + CYCLE_MS > n:
            raise FeatureError(f"pre-window outside recording for {trial.trial_id}")
        w_pre = channels[:, pre_idx : pre_idx + CYCLE_MS]
        lp = LabelingParams(0.0, float(trial.duration_ms), trial.odour_a)
        t_lo = math.ceil((trial.onset_ms + span_ms[0]) / CYCLE_MS) * CYCLE_MS
        t_hi = trial.onset_ms + span_ms[1]
        for t in range(t_lo, t_hi, CYCLE_MS):
            i0 = t - start
            if i0 < 0 or i0 + CYCLE_MS > n:
                continue
            w_t = channels[:, i0 : i0 + CYCLE_MS]
            vec = normalize(w_t, w_pre).reshape(-1) if normalized else w_t.reshape(-1)
            fid = f"{trial.trial_id}:{t}"
            rows.append((fid, trial.trial_id, t, vec))
            labels.append(_label_row(trial, fid, t,
                                     label_feature(t - trial.onset_ms, lp)))
    return FeatureSet(rows=rows, labels=labels, mode="phase" if normalized else "raw")


def extract_spectral_features(
    run_dir: str | Path,
    params_path: str | Path | None = None,
    source: str = "sensor",
    tail_ms: int = SPECTRAL_TAIL_MS,
) -> FeatureSet:
    """Dominant-peak DFT triplets per trial from the constant-temperature bank.

    ``source`` selects the analysed signal: 'sensor' (log-transformed
    resistances), or the control variants 't_hot' and 'pid' (no log).
    """
    run_dir = Path(run_dir)
    trials = read_manifest(run_dir / "manifest.csv")
    digest = load_sensor_params(params_path).digest
    rows, labels = [], []
    for trial in trials:
        rec = read_recording(_find_recording(run_dir, trial.trial_id))
        _check_digest(rec.header, digest, trial.trial_id)
        protocol = rec.header.get("protocol", "A")
        bank = constant_sensors(protocol)
        if not bank and source != "pid":
            raise DataError(
                f"protocol {protocol} has no constant-temperature bank; "
                "spectral features need one"
            )
        i0 = trial.onset_ms - rec.start_ms
        i1 = trial.offset_ms + tail_ms - rec.start_ms
        if i0 < 0 or i1 > rec.t_ms.shape[0]:
            raise FeatureError(f"spectral window outside recording for {trial.trial_id}")
        if source == "sensor":
            data = np.stack([rec.channel(s)[i0:i1] for s in bank])
            transform = "log"
        elif source == "t_hot":
            data = np.stack([rec.hot_channel(s)[i0:i1] for s in bank])
            transform = "identity"
        elif source == "pid":
            data = rec.pid_v[i0:i1][None, :]
            transform = "identity"
        else:
            raise DataError(f"unknown spectral source {source!r}")
        feat = spectral_feature(
            data, transform=transform, window_ms=(trial.onset_ms, trial.offset_ms + tail_ms)
        )
        fid = f"{trial.trial_id}:{trial.onset_ms}"
        rows.append((fid, trial.trial_id, trial.onset_ms, feat.vector))
        labels.append(_label_row(trial, fid, trial.onset_ms,
                                 label_feature(0.0, LabelingParams(
                                     0.0, float(trial.duration_ms), trial.odour_a))))
    return FeatureSet(rows=rows, labels=labels, mode="dft")


def labels_path(features_path: str | Path) -> Path:
    return Path(str(features_path) + ".labels.csv")


def write_labels(path: str | Path, labels: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(LABELS_COLUMNS) + "\n")
        for row in labels:
            freq = row["frequency_hz"]
            freq = int(freq) if float(freq).is_integer() else freq
            fh.write(",".join(str(row[c]) if c != "frequency_hz" else str(freq)
                              for c in LABELS_COLUMNS) + "\n")


def read_labels(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"labels sidecar not found: {path}")
    out = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != LABELS_COLUMNS:
            raise DataError(f"unexpected labels columns in {path}")
        for line in fh:
            p = line.rstrip("\n").split(",")
            row = dict(zip(LABELS_COLUMNS, p))
            for key in ("t_ms", "t_rel_ms", "duration_ms", "concentration_pct", "onset_ms"):
                row[key] = int(row[key])
            row["frequency_hz"] = float(row["frequency_hz"])
            out.append(row)
    return out
