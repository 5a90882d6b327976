"""Recording and manifest persistence.

Recordings default to decimal text (debuggable); ``.npz`` gives a binary twin.
Every numeric column is quantised onto a decimal grid by the instrument models
(resistance 0.05 ohm, temperature 0.01 C, PID 10 uV, flow 1e-4), so the text
round-trip is bit-exact: parsing the printed decimal recovers the identical
float64. Both formats carry the header, including the sensor-parameter digest
that the feature extractor checks before mixing files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_VERSION = "1"
N_SENSORS = 8

RECORDING_COLUMNS = (
    ["t_ms"]
    + [f"r_sensor_{i}" for i in range(1, N_SENSORS + 1)]
    + [f"t_hot_{i}" for i in range(1, N_SENSORS + 1)]
    + ["valve_bitmask", "pid_v", "flow_au"]
)

MANIFEST_COLUMNS = (
    "trial_id", "odour_a", "odour_b", "duration_ms", "concentration_pct",
    "frequency_hz", "mode", "onset_ms", "seed",
)


@dataclass
class Recording:
    """One trial's multichannel time series at 1 kHz."""

    header: dict
    t_ms: np.ndarray
    r: np.ndarray        # (n, 8) ohm
    t_hot: np.ndarray    # (n, 8) degC
    valve_mask: np.ndarray
    pid_v: np.ndarray
    flow_au: np.ndarray

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=np.int64)
        n = self.t_ms.shape[0]
        if n == 0:
            raise DataError("empty recording")
        if np.any(np.diff(self.t_ms) != 1):
            raise DataError("recording must be gap-free at 1 ms pitch")
        for name in ("r", "t_hot"):
            arr = getattr(self, name)
            if arr.shape != (n, N_SENSORS):
                raise DataError(f"{name} must be (n, {N_SENSORS})")

    @property
    def start_ms(self) -> int:
        return int(self.t_ms[0])

    def channel(self, sensor_id: int) -> np.ndarray:
        """Resistance series of one sensor (1-based id)."""
        return self.r[:, sensor_id - 1]

    def hot_channel(self, sensor_id: int) -> np.ndarray:
        return self.t_hot[:, sensor_id - 1]


def write_recording(path: str | Path, rec: Recording) -> None:
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(
            path,
            header=np.frombuffer(json.dumps(rec.header, sort_keys=True).encode(), dtype=np.uint8),
            t_ms=rec.t_ms, r=rec.r, t_hot=rec.t_hot,
            valve_mask=rec.valve_mask.astype(np.int64),
            pid_v=rec.pid_v, flow_au=rec.flow_au,
        )
        return
    with open(path, "w") as fh:
        fh.write(f"# format_version = {FORMAT_VERSION}\n")
        for key, value in rec.header.items():
            if key == "format_version":
                continue
            fh.write(f"# {key} = {value}\n")
        fh.write(",".join(RECORDING_COLUMNS) + "\n")
        n = rec.t_ms.shape[0]
        for i in range(n):
            parts = [str(int(rec.t_ms[i]))]
            parts += [f"{v:.2f}" for v in rec.r[i]]
            parts += [f"{v:.2f}" for v in rec.t_hot[i]]
            parts.append(str(int(rec.valve_mask[i])))
            parts.append(f"{rec.pid_v[i]:.5f}")
            parts.append(f"{rec.flow_au[i]:.4f}")
            fh.write(",".join(parts) + "\n")


def read_recording(path: str | Path) -> Recording:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            return Recording(
                header=header, t_ms=data["t_ms"], r=data["r"], t_hot=data["t_hot"],
                valve_mask=data["valve_mask"], pid_v=data["pid_v"], flow_au=data["flow_au"],
            )
    header: dict = {}
    with open(path) as fh:
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
            pos = fh.tell()
            line = fh.readline()
        if line.strip().split(",") != RECORDING_COLUMNS:
            raise DataError(f"unexpected recording columns in {path}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(RECORDING_COLUMNS):
        raise DataError(f"malformed recording {path}")
    return Recording(
        header=header,
        t_ms=data[:, 0].astype(np.int64),
        r=data[:, 1 : 1 + N_SENSORS],
        t_hot=data[:, 1 + N_SENSORS : 1 + 2 * N_SENSORS],
        valve_mask=data[:, 1 + 2 * N_SENSORS].astype(np.int64),
        pid_v=data[:, 2 + 2 * N_SENSORS],
        flow_au=data[:, 3 + 2 * N_SENSORS],
    )


@dataclass(frozen=True)
class TrialRecord:
    """One manifest row."""

    trial_id: str
    odour_a: str
    odour_b: str
    duration_ms: int
    concentration_pct: int
    frequency_hz: float
    mode: str
    onset_ms: int
    seed: int

    @property
    def offset_ms(self) -> int:
        return self.onset_ms + self.duration_ms

    @property
    def gas_pair(self) -> str:
        return "-".join(sorted([self.odour_a, self.odour_b]))


def write_manifest(path: str | Path, trials: list[TrialRecord]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(MANIFEST_COLUMNS) + "\n")
        for t in trials:
            freq = int(t.frequency_hz) if float(t.frequency_hz).is_integer() else t.frequency_hz
            fh.write(
                f"{t.trial_id},{t.odour_a},{t.odour_b},{t.duration_ms},"
                f"{t.concentration_pct},{freq},{t.mode},{t.onset_ms},{t.seed}\n"
            )


def read_manifest(path: str | Path) -> list[TrialRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != MANIFEST_COLUMNS:
            raise DataError(f"unexpected manifest columns: {header}")
        out = []
        for line in fh:
            p = line.rstrip("\n").split(",")
            if len(p) != len(MANIFEST_COLUMNS):
                raise DataError(f"malformed manifest row: {line!r}")
            out.append(TrialRecord(
                trial_id=p[0], odour_a=p[1], odour_b=p[2], duration_ms=int(p[3]),
                concentration_pct=int(p[4]), frequency_hz=float(p[5]), mode=p[6],
                onset_ms=int(p[7]), seed=int(p[8]),
            ))
    return out


def recording_path(out_dir: str | Path, trial_id: str, fmt: str = "csv") -> Path:
    return Path(out_dir) / f"recording_{trial_id}.{fmt}"
