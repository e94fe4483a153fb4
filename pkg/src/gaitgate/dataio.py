"""Corpus I/O and window tensor preparation.

A corpus on disk is a directory of per-session `t,x,y,z` CSV files plus a
manifest.json listing who recorded what under which condition. In memory the
same corpus becomes a WindowedDataset: per session, the dB spectrograms of
all fixed-duration magnitude windows plus their time intervals. Training and
evaluation only ever touch the in-memory form.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import signal
from .signal import AccelSeries, MagnitudeSeries, StftConfig

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": [
            "user_id",
            "session_id",
            "sensor_position",
            "shoe_id",
            "surface",
            "fs",
            "path",
        ],
        "properties": {
            "user_id": {"type": "string", "minLength": 1},
            "session_id": {"type": "string", "minLength": 1},
            "sensor_position": {"type": "string"},
            "shoe_id": {"type": "string"},
            "surface": {"type": "string"},
            "fs": {"type": "number", "exclusiveMinimum": 0},
            "path": {"type": "string", "minLength": 1},
        },
    },
}


@dataclass(frozen=True)
class SessionRecord:
    """One recorded session with its manifest metadata."""

    user_id: str
    session_id: str
    sensor_position: str
    shoe_id: str
    surface: str
    series: AccelSeries


def load_manifest(manifest_path: Path) -> list[dict]:
    """Read and schema-validate a corpus manifest."""
    manifest_path = Path(manifest_path)
    try:
        entries = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(entries, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValueError(f"manifest {manifest_path} invalid: {exc.message}") from exc
    return entries


def load_session_csv(path: Path, fs: float) -> AccelSeries:
    """Parse one `t,x,y,z` session file."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    if data.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns t,x,y,z, got {data.shape[1]}")
    return AccelSeries(t=data[:, 0], xyz=data[:, 1:4], fs=fs)


def load_corpus(manifest_path: Path) -> list[SessionRecord]:
    """Load every session named by a manifest, in manifest order."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = []
    for entry in load_manifest(manifest_path):
        series = load_session_csv(root / entry["path"], float(entry["fs"]))
        records.append(
            SessionRecord(
                user_id=entry["user_id"],
                session_id=entry["session_id"],
                sensor_position=entry["sensor_position"],
                shoe_id=entry["shoe_id"],
                surface=entry["surface"],
                series=series,
            )
        )
    log.info("loaded %d sessions from %s", len(records), manifest_path)
    return records


@dataclass(frozen=True)
class SessionWindows:
    """All spectrogram windows of one session, with their time intervals.

    specs: (n_windows, F, T) dB values, pre-augmentation.
    intervals: (n_windows, 2) window start/end in seconds.
    """

    user_id: str
    session_id: str
    specs: np.ndarray
    intervals: np.ndarray

    @property
    def n_windows(self) -> int:
        return self.specs.shape[0]


class WindowedDataset:
    """Sessions grouped by user, in first-seen user order."""

    def __init__(self, sessions: list[SessionWindows]):
        self._by_user: dict[str, list[SessionWindows]] = {}
        for sess in sessions:
            self._by_user.setdefault(sess.user_id, []).append(sess)

    @property
    def users(self) -> list[str]:
        return list(self._by_user)

    def sessions_for(self, user_id: str) -> list[SessionWindows]:
        return self._by_user[user_id]

    def restrict(self, user_ids: list[str]) -> "WindowedDataset":
        """The sub-dataset containing only the given users, in the given order."""
        missing = [u for u in user_ids if u not in self._by_user]
        if missing:
            raise KeyError(f"users not in dataset: {missing}")
        out = WindowedDataset([])
        out._by_user = {u: self._by_user[u] for u in user_ids}
        return out

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_user.values())


def window_session(
    user_id: str,
    session_id: str,
    series: AccelSeries,
    window_sec: float,
    overlap_frac: float,
    stft_cfg: StftConfig,
) -> SessionWindows:
    mag = signal.magnitude(series)
    specs, intervals = signal.spectrogram_windows(mag, window_sec, overlap_frac, stft_cfg)
    data = (
        np.stack([s.data for s in specs])
        if specs
        else np.empty((0, stft_cfg.freq_bins, 0))
    )
    return SessionWindows(
        user_id=user_id, session_id=session_id, specs=data, intervals=intervals
    )


def windowed_dataset(
    records: list[SessionRecord],
    window_sec: float,
    overlap_frac: float,
    stft_cfg: StftConfig,
) -> WindowedDataset:
    """Window every session of a corpus; sessions too short for one window drop out."""
    sessions = []
    for rec in records:
        sw = window_session(
            rec.user_id, rec.session_id, rec.series, window_sec, overlap_frac, stft_cfg
        )
        if sw.n_windows == 0:
            log.warning(
                "session %s/%s too short for a %gs window, skipping",
                rec.user_id,
                rec.session_id,
                window_sec,
            )
            continue
        sessions.append(sw)
    return WindowedDataset(sessions)


def sessions_by_user(records: list[SessionRecord]) -> dict[str, list[SessionRecord]]:
    out: dict[str, list[SessionRecord]] = {}
    for rec in records:
        out.setdefault(rec.user_id, []).append(rec)
    return out
