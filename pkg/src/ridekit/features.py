"""Fixed-length per-driver behavior features from matched kinematics.

Rates are events per 100 km; ratio features compare the driver against the
road norms on the cells they actually drove, so a driver who moves with
traffic lands near 1.0 regardless of where they drive.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import RidekitError
from .cluster import zscore_columns
from .norms import NormsTable, _per_second_bins
from .stats import quantile_sorted

FEATURE_NAMES = (
    "mean_speed_ratio",
    "p95_speed_ratio",
    "hard_accel_rate",
    "hard_brake_rate",
    "sharp_turn_rate",
    "mean_abs_lat_accel",
    "mean_abs_lon_accel",
    "mean_abs_jerk",
    "brake_z_p95",
    "distance_km",
)

#: Cells whose mean speed is below this carry no speed-ratio information
#: (parked or crawling traffic), so they are left out of ratio features.
MIN_RATIO_CELL_SPEED = 1.0


class FeatureError(RidekitError):
    pass


class TooFewDrivers(FeatureError):
    pass


class EmptyAfterStandardize(FeatureError):
    pass


@dataclass
class EventThresholds:
    hard_accel_mps2: float = 2.5  # lon_accel above this
    hard_brake_mps2: float = -3.0  # lon_accel below this
    sharp_turn_mps2: float = 3.0  # |lat_accel| above this
    min_event_s: float = 1.0


@dataclass
class DriverFeatures:
    driver_id: str
    mean_speed_ratio: float
    p95_speed_ratio: float
    hard_accel_rate: float
    hard_brake_rate: float
    sharp_turn_rate: float
    mean_abs_lat_accel: float
    mean_abs_lon_accel: float
    mean_abs_jerk: float
    brake_z_p95: float
    distance_km: float

    def as_vector(self) -> np.ndarray:
        return np.asarray([getattr(self, name) for name in FEATURE_NAMES], dtype=float)


@dataclass
class SkipRecord:
    driver_id: str
    reason: str


def _count_runs(mask: np.ndarray, contiguous: np.ndarray, min_len: int) -> int:
    """Number of maximal runs of True at least min_len long.

    `contiguous[i]` says whether sample i continues the run from i-1.
    """
    count = 0
    run = 0
    for i in range(len(mask)):
        if mask[i] and (run == 0 or contiguous[i]):
            run += 1
        elif mask[i]:
            if run >= min_len:
                count += 1
            run = 1
        else:
            if run >= min_len:
                count += 1
            run = 0
    if run >= min_len:
        count += 1
    return count


class _DriverAccumulator:
    def __init__(self, driver_id: str):
        self.driver_id = driver_id
        self.distance_m = 0.0
        self.speed_ratios: list[np.ndarray] = []
        self.brake_z: list[np.ndarray] = []
        self.abs_lat_sum = 0.0
        self.abs_lon_sum = 0.0
        self.abs_jerk_sum = 0.0
        self.n_seconds = 0
        self.n_jerk = 0
        self.n_hard_accel = 0
        self.n_hard_brake = 0
        self.n_sharp_turn = 0

    def add_ride(self, traj, norms: NormsTable, thresholds: EventThresholds) -> None:
        kin = traj.kin
        bins = _per_second_bins(traj, norms.day_mode)
        eligible = np.asarray([sb is not None for sb in bins])
        if not eligible.any():
            return
        idx = np.flatnonzero(eligible)
        speed = kin.speed[idx]
        lon = kin.lon_accel[idx]
        lat = kin.lat_accel[idx]
        t = kin.t[idx]

        self.distance_m += float(speed.sum())
        self.abs_lat_sum += float(np.abs(lat).sum())
        self.abs_lon_sum += float(np.abs(lon).sum())
        self.n_seconds += len(idx)

        contiguous = np.concatenate(([False], np.diff(t) <= 1.5))
        dt = np.diff(t)
        jerk_ok = dt <= 1.5
        if jerk_ok.any():
            self.abs_jerk_sum += float(np.sum(np.abs(np.diff(lon)[jerk_ok] / dt[jerk_ok])))
            self.n_jerk += int(jerk_ok.sum())

        min_len = max(1, int(round(thresholds.min_event_s)))
        self.n_hard_accel += _count_runs(lon > thresholds.hard_accel_mps2, contiguous, min_len)
        self.n_hard_brake += _count_runs(lon < thresholds.hard_brake_mps2, contiguous, min_len)
        self.n_sharp_turn += _count_runs(
            np.abs(lat) > thresholds.sharp_turn_mps2, contiguous, min_len
        )

        ratios = []
        brake_zs = []
        for local_i, sb in zip(range(len(idx)), (bins[i] for i in idx)):
            cell = norms.get(sb[0], sb[1])
            if cell is None or not cell.valid:
                continue
            s_speed = cell.stats["speed"]
            if s_speed.mean > MIN_RATIO_CELL_SPEED:
                ratios.append(speed[local_i] / s_speed.mean)
            s_lon = cell.stats["lon_accel"]
            if lon[local_i] < 0.0 and s_lon.std > 0.1:
                # positive when braking harder than the local norm
                brake_zs.append((s_lon.mean - lon[local_i]) / s_lon.std)
        if ratios:
            self.speed_ratios.append(np.asarray(ratios))
        if brake_zs:
            self.brake_z.append(np.asarray(brake_zs))

    def finalize(self, min_km: float):
        distance_km = self.distance_m / 1000.0
        if distance_km < min_km:
            return None, SkipRecord(
                self.driver_id, f"distance {distance_km:.2f} km below minimum {min_km:g} km"
            )
        if not self.speed_ratios:
            return None, SkipRecord(self.driver_id, "no seconds on valid norm cells")
        ratios = np.sort(np.concatenate(self.speed_ratios))
        brake = np.sort(np.concatenate(self.brake_z)) if self.brake_z else np.empty(0)
        per_100km = distance_km / 100.0
        feats = DriverFeatures(
            driver_id=self.driver_id,
            mean_speed_ratio=float(ratios.mean()),
            p95_speed_ratio=float(quantile_sorted(ratios, 0.95)),
            hard_accel_rate=self.n_hard_accel / per_100km,
            hard_brake_rate=self.n_hard_brake / per_100km,
            sharp_turn_rate=self.n_sharp_turn / per_100km,
            mean_abs_lat_accel=self.abs_lat_sum / self.n_seconds,
            mean_abs_lon_accel=self.abs_lon_sum / self.n_seconds,
            mean_abs_jerk=self.abs_jerk_sum / self.n_jerk if self.n_jerk else 0.0,
            brake_z_p95=float(quantile_sorted(brake, 0.95)) if brake.size else 0.0,
            distance_km=distance_km,
        )
        return feats, None


def extract_driver_features(
    trajectories,
    norms: NormsTable,
    min_km: float = 5.0,
    thresholds: EventThresholds | None = None,
):
    """Per-driver feature vectors plus a skip report for excluded drivers.

    Rides are processed in (driver_id, ride_id) order so the result is
    independent of input ordering.
    """
    thresholds = thresholds or EventThresholds()
    ordered = sorted(trajectories, key=lambda tr: (tr.kin.driver_id, tr.kin.ride_id))
    accums: dict[str, _DriverAccumulator] = {}
    for traj in ordered:
        acc = accums.setdefault(traj.kin.driver_id, _DriverAccumulator(traj.kin.driver_id))
        acc.add_ride(traj, norms, thresholds)

    features: list[DriverFeatures] = []
    skips: list[SkipRecord] = []
    for driver_id in sorted(accums):
        feats, skip = accums[driver_id].finalize(min_km)
        if feats is not None:
            features.append(feats)
        else:
            skips.append(skip)
    return features, skips


@dataclass
class FeatureMatrix:
    driver_ids: list[str]
    X: np.ndarray  # standardized, surviving columns only
    raw: np.ndarray  # original values, all columns
    column_names: list[str]
    all_column_names: list[str]
    dropped_columns: list[str]
    col_means: np.ndarray
    col_stds: np.ndarray


def standardize(features: list[DriverFeatures]) -> FeatureMatrix:
    """Z-score feature columns; constant columns are dropped and recorded."""
    if len(features) < 2:
        raise TooFewDrivers("standardization needs at least 2 drivers")
    raw = np.vstack([f.as_vector() for f in features])
    Xs, kept, means, stds = zscore_columns(raw)
    if Xs.shape[1] == 0:
        raise EmptyAfterStandardize("every feature column is constant")
    names = [FEATURE_NAMES[i] for i in kept]
    dropped = [name for i, name in enumerate(FEATURE_NAMES) if i not in set(kept)]
    return FeatureMatrix(
        driver_ids=[f.driver_id for f in features],
        X=Xs,
        raw=raw,
        column_names=names,
        all_column_names=list(FEATURE_NAMES),
        dropped_columns=dropped,
        col_means=means,
        col_stds=stds,
    )


def write_features_csv(features: list[DriverFeatures], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["driver_id", *FEATURE_NAMES])
        for f in features:
            writer.writerow([f.driver_id, *(repr(float(v)) for v in f.as_vector())])


def read_features_csv(path) -> list[DriverFeatures]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                DriverFeatures(
                    driver_id=row["driver_id"],
                    **{name: float(row[name]) for name in FEATURE_NAMES},
                )
            )
    return out


def write_skips_csv(skips: list[SkipRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["driver_id", "reason"])
        for s in skips:
            writer.writerow([s.driver_id, s.reason])
