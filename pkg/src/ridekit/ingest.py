"""Parsing and validation of per-ride sensor log directories.

A ride directory contains a `ride.meta` file plus one CSV per sensor
channel. GPS and magnetometer are nominally 1 Hz, accelerometer /
gyroscope / device-motion are nominally 10 Hz. Accelerometer values are in
G units (1.0 = one gravity), rotation rates in rad/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from . import RidekitError

GPS = "gps"
ACCEL = "accel"
GYRO = "gyro"
MAG = "mag"
MOTION = "motion"

CHANNELS = (GPS, ACCEL, GYRO, MAG, MOTION)
REQUIRED_CHANNELS = (GPS, ACCEL)
NOMINAL_HZ = {GPS: 1, MAG: 1, ACCEL: 10, GYRO: 10, MOTION: 10}

GPS_COLUMNS = ("t", "lat", "lon", "speed", "heading")
AXIS_COLUMNS = ("t", "x", "y", "z")

# Fraction of duplicate-timestamp rows in a channel beyond which the log is
# treated as corrupted rather than quietly deduplicated.
MAX_DUPLICATE_FRACTION = 0.01

MIN_USABLE_GPS_S = 30.0


class IngestError(RidekitError):
    pass


class MissingChannel(IngestError):
    def __init__(self, channel: str, directory):
        super().__init__(f"required channel '{channel}' missing from {directory}")
        self.channel = channel


class MalformedRow(IngestError):
    def __init__(self, filename: str, line: int, reason: str):
        super().__init__(f"{filename}:{line}: {reason}")
        self.filename = filename
        self.line = line
        self.reason = reason


class NonMonotoneTime(IngestError):
    def __init__(self, filename: str, dup_fraction: float):
        super().__init__(
            f"{filename}: {dup_fraction:.1%} of rows share a timestamp with an "
            "earlier row; log looks corrupted"
        )
        self.filename = filename
        self.dup_fraction = dup_fraction


@dataclass
class GpsStream:
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    speed: np.ndarray
    heading: np.ndarray  # NaN where the log left the field empty
    channel: str = GPS
    nominal_hz: int = 1

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class AxisStream:
    channel: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    nominal_hz: int = 10

    def __len__(self) -> int:
        return len(self.t)

    def axis(self, name: str) -> np.ndarray:
        return {"x": self.x, "y": self.y, "z": self.z}[name]


@dataclass
class Ride:
    ride_id: str
    driver_id: str
    start_time: datetime
    gps: GpsStream
    accel: AxisStream
    gyro: AxisStream | None = None
    mag: AxisStream | None = None
    motion: AxisStream | None = None

    @property
    def streams(self) -> dict:
        out = {GPS: self.gps, ACCEL: self.accel}
        for name in (GYRO, MAG, MOTION):
            s = getattr(self, name)
            if s is not None:
                out[name] = s
        return out

    def duration_s(self) -> float:
        if len(self.gps) < 2:
            return 0.0
        return float(self.gps.t[-1] - self.gps.t[0])


@dataclass
class ChannelReport:
    channel: str
    n_samples: int
    duration_s: float
    observed_hz: float
    gap_count: int


@dataclass
class ValidationReport:
    ride_id: str
    usable: bool
    channels: dict[str, ChannelReport] = field(default_factory=dict)


def _parse_meta(path: Path) -> dict[str, str]:
    if not path.exists():
        raise MalformedRow("ride.meta", 0, "file missing")
    meta: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MalformedRow("ride.meta", lineno, "expected key=value")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    for key in ("ride_id", "driver_id", "start_time"):
        if not meta.get(key):
            raise MalformedRow("ride.meta", 0, f"missing key '{key}'")
    return meta


def _parse_start_time(value: str) -> datetime:
    text = value.replace("Z", "+00:00")
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise MalformedRow("ride.meta", 0, f"bad start_time: {exc}") from exc
    if dt.tzinfo is None:
        raise MalformedRow("ride.meta", 0, "start_time must carry a UTC offset")
    return dt


def _read_channel_csv(path: Path, columns: tuple[str, ...]) -> pd.DataFrame:
    filename = path.name
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except Exception as exc:
        raise MalformedRow(filename, 1, f"unreadable CSV: {exc}") from exc
    if list(df.columns) != list(columns):
        raise MalformedRow(filename, 1, f"expected header {','.join(columns)}")
    for col in columns:
        if df[col].dtype == object:
            coerced = pd.to_numeric(df[col], errors="coerce")
            bad = coerced.isna() & df[col].notna()
            if bad.any():
                raise MalformedRow(filename, int(bad.idxmax()) + 2, f"non-numeric '{col}'")
            df[col] = coerced
        values = df[col].to_numpy(dtype=float)
        if col != "heading" and not np.all(np.isfinite(values)):
            line = int(np.flatnonzero(~np.isfinite(values))[0]) + 2
            raise MalformedRow(filename, line, f"missing or non-finite '{col}'")
    return df


def _check_bounds(df: pd.DataFrame, filename: str) -> None:
    checks = [
        ("t", df["t"].to_numpy() >= 0.0, "t must be >= 0"),
    ]
    if "lat" in df.columns:
        checks += [
            ("lat", np.abs(df["lat"].to_numpy()) <= 90.0, "lat out of [-90, 90]"),
            ("lon", np.abs(df["lon"].to_numpy()) <= 180.0, "lon out of [-180, 180]"),
            ("speed", df["speed"].to_numpy() >= 0.0, "speed must be >= 0"),
        ]
    for _, ok, reason in checks:
        if not ok.all():
            raise MalformedRow(filename, int(np.flatnonzero(~ok)[0]) + 2, reason)


def _sort_dedup(df: pd.DataFrame, filename: str) -> pd.DataFrame:
    """Time-sort a channel, collapsing duplicate timestamps to the last row."""
    n = len(df)
    if n == 0:
        return df
    df = df.sort_values("t", kind="stable")
    dup = df["t"].duplicated(keep="last")
    n_dup = int(dup.sum())
    if n_dup > MAX_DUPLICATE_FRACTION * n:
        raise NonMonotoneTime(filename, n_dup / n)
    return df[~dup].reset_index(drop=True)


def parse_ride(directory) -> Ride:
    """Parse one ride directory into time-sorted, validated streams."""
    directory = Path(directory)
    meta = _parse_meta(directory / "ride.meta")
    start_time = _parse_start_time(meta["start_time"])

    streams: dict[str, object] = {}
    for channel in CHANNELS:
        path = directory / f"{channel}.csv"
        if not path.exists():
            if channel in REQUIRED_CHANNELS:
                raise MissingChannel(channel, directory)
            continue
        columns = GPS_COLUMNS if channel == GPS else AXIS_COLUMNS
        df = _read_channel_csv(path, columns)
        _check_bounds(df, path.name)
        df = _sort_dedup(df, path.name)
        if channel == GPS:
            streams[channel] = GpsStream(
                t=df["t"].to_numpy(dtype=float),
                lat=df["lat"].to_numpy(dtype=float),
                lon=df["lon"].to_numpy(dtype=float),
                speed=df["speed"].to_numpy(dtype=float),
                heading=df["heading"].to_numpy(dtype=float),
            )
        else:
            streams[channel] = AxisStream(
                channel=channel,
                t=df["t"].to_numpy(dtype=float),
                x=df["x"].to_numpy(dtype=float),
                y=df["y"].to_numpy(dtype=float),
                z=df["z"].to_numpy(dtype=float),
                nominal_hz=NOMINAL_HZ[channel],
            )

    return Ride(
        ride_id=meta["ride_id"],
        driver_id=meta["driver_id"],
        start_time=start_time,
        gps=streams[GPS],
        accel=streams[ACCEL],
        gyro=streams.get(GYRO),
        mag=streams.get(MAG),
        motion=streams.get(MOTION),
    )


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def serialize_ride(ride: Ride, directory) -> None:
    """Write a ride back to its on-disk layout; floats round-trip bitwise."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = (
        f"ride_id={ride.ride_id}\n"
        f"driver_id={ride.driver_id}\n"
        f"start_time={ride.start_time.isoformat()}\n"
    )
    (directory / "ride.meta").write_text(meta)

    gps = ride.gps
    lines = [",".join(GPS_COLUMNS)]
    for i in range(len(gps)):
        lines.append(
            ",".join(
                (
                    _fmt(gps.t[i]),
                    _fmt(gps.lat[i]),
                    _fmt(gps.lon[i]),
                    _fmt(gps.speed[i]),
                    _fmt(gps.heading[i]),
                )
            )
        )
    (directory / "gps.csv").write_text("\n".join(lines) + "\n")

    for name, stream in ride.streams.items():
        if name == GPS:
            continue
        lines = [",".join(AXIS_COLUMNS)]
        for i in range(len(stream)):
            lines.append(
                ",".join(
                    (_fmt(stream.t[i]), _fmt(stream.x[i]), _fmt(stream.y[i]), _fmt(stream.z[i]))
                )
            )
        (directory / f"{name}.csv").write_text("\n".join(lines) + "\n")


def validate_ride(ride: Ride) -> ValidationReport:
    """Summarize per-channel rates, gaps, and overall usability.

    A gap is any inter-sample interval longer than 3x the nominal period.
    The ride is usable when its GPS span covers at least MIN_USABLE_GPS_S.
    """
    report = ValidationReport(ride_id=ride.ride_id, usable=True)
    for name, stream in ride.streams.items():
        t = stream.t
        n = len(t)
        duration = float(t[-1] - t[0]) if n >= 2 else 0.0
        observed_hz = (n - 1) / duration if duration > 0 else 0.0
        if n >= 2:
            gaps = np.diff(t) > 3.0 / stream.nominal_hz
            gap_count = int(gaps.sum())
        else:
            gap_count = 0
        report.channels[name] = ChannelReport(
            channel=name,
            n_samples=n,
            duration_s=duration,
            observed_hz=observed_hz,
            gap_count=gap_count,
        )
    report.usable = report.channels[GPS].duration_s >= MIN_USABLE_GPS_S
    return report


def find_ride_dirs(corpus_dir) -> list[Path]:
    """Ride directories under a corpus root, sorted for determinism."""
    corpus_dir = Path(corpus_dir)
    return sorted(p.parent for p in corpus_dir.glob("*/ride.meta"))
