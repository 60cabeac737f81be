"""Per-segment, per-time-bin driving norms and deviation flagging.

Every matched second of every ride contributes its speed and vehicle-frame
accelerations to the cell for (road segment, local-time bin). Cells become
valid once enough distinct rides have contributed; valid cells supply the
mean/std/quantile context against which individual rides are z-scored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import RidekitError
from .mapmatch import MatchedKinematics
from .stats import quantile_sorted

DEFAULT_MIN_TRIPS = 40

#: Quantities tracked per cell. The absolute-acceleration variants exist so
#: segment-level summaries survive a round trip through the CSV export.
QUANTITIES = ("speed", "lon_accel", "lat_accel", "abs_lon_accel", "abs_lat_accel")
FLAG_QUANTITIES = ("speed", "lon_accel", "lat_accel")

QUANTILE_PS = (0.05, 0.25, 0.50, 0.75, 0.95)

WEEKDAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


class NormsError(RidekitError):
    pass


class TooFewSegments(NormsError):
    pass


@dataclass(frozen=True)
class TimeBin:
    day_kind: str  # "weekday"/"weekend", or a weekday name in seven_day mode
    slot: int  # 30-minute slot of local time, 0..47

    def __post_init__(self):
        if not 0 <= self.slot <= 47:
            raise NormsError(f"slot {self.slot} out of range")


def time_bin_of(local_dt, day_mode: str = "weekend_split") -> TimeBin:
    slot = (local_dt.hour * 60 + local_dt.minute) // 30
    if day_mode == "seven_day":
        day_kind = WEEKDAY_NAMES[local_dt.weekday()]
    else:
        day_kind = "weekday" if local_dt.weekday() < 5 else "weekend"
    return TimeBin(day_kind, slot)


@dataclass
class QuantityStats:
    mean: float
    std: float
    q05: float
    q25: float
    q50: float
    q75: float
    q95: float


@dataclass
class SegmentNorm:
    segment_id: str
    bin: TimeBin
    trip_count: int
    sample_count: int
    valid: bool
    stats: dict[str, QuantityStats] = field(default_factory=dict)


class _CellAccumulator:
    """Mergeable per-cell sample store; finalization is order-canonical."""

    __slots__ = ("ride_ids", "values")

    def __init__(self):
        self.ride_ids: set[str] = set()
        self.values: dict[str, list[np.ndarray]] = {q: [] for q in QUANTITIES}

    def add(self, ride_id: str, samples: dict[str, np.ndarray]) -> None:
        self.ride_ids.add(ride_id)
        for q in QUANTITIES:
            self.values[q].append(np.asarray(samples[q], dtype=float))

    def merge(self, other: "_CellAccumulator") -> "_CellAccumulator":
        self.ride_ids |= other.ride_ids
        for q in QUANTITIES:
            self.values[q].extend(other.values[q])
        return self

    def finalize(self, segment_id: str, bin: TimeBin, min_trips: int) -> SegmentNorm:
        stats = {}
        sample_count = 0
        for q in QUANTITIES:
            pooled = np.sort(np.concatenate(self.values[q])) if self.values[q] else np.empty(0)
            sample_count = len(pooled)
            if sample_count == 0:
                stats[q] = QuantityStats(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
                continue
            mean = float(np.mean(pooled))
            std = float(np.sqrt(np.mean((pooled - mean) ** 2)))
            qs = quantile_sorted(pooled, QUANTILE_PS)
            stats[q] = QuantityStats(mean, std, *(float(x) for x in qs))
        return SegmentNorm(
            segment_id=segment_id,
            bin=bin,
            trip_count=len(self.ride_ids),
            sample_count=sample_count,
            valid=len(self.ride_ids) >= min_trips,
            stats=stats,
        )


@dataclass
class NormsTable:
    cells: dict[tuple[str, str, int], SegmentNorm]
    min_trips: int
    day_mode: str

    def get(self, segment_id: str, bin: TimeBin) -> SegmentNorm | None:
        return self.cells.get((segment_id, bin.day_kind, bin.slot))

    def valid_cells(self) -> list[SegmentNorm]:
        return [c for c in self.cells.values() if c.valid]

    def to_csv(self, path) -> None:
        header = [
            "segment_id", "day_kind", "slot", "quantity", "trip_count",
            "sample_count", "mean", "std", "q05", "q25", "q50", "q75", "q95", "valid",
        ]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for key in sorted(self.cells):
                cell = self.cells[key]
                for q in QUANTITIES:
                    s = cell.stats[q]
                    writer.writerow(
                        [
                            cell.segment_id, cell.bin.day_kind, cell.bin.slot, q,
                            cell.trip_count, cell.sample_count,
                            repr(s.mean), repr(s.std), repr(s.q05), repr(s.q25),
                            repr(s.q50), repr(s.q75), repr(s.q95),
                            int(cell.valid),
                        ]
                    )

    @classmethod
    def from_csv(cls, path, min_trips: int = DEFAULT_MIN_TRIPS, day_mode: str = "weekend_split"):
        cells: dict[tuple[str, str, int], SegmentNorm] = {}
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["segment_id"], row["day_kind"], int(row["slot"]))
                cell = cells.get(key)
                if cell is None:
                    cell = SegmentNorm(
                        segment_id=row["segment_id"],
                        bin=TimeBin(row["day_kind"], int(row["slot"])),
                        trip_count=int(row["trip_count"]),
                        sample_count=int(row["sample_count"]),
                        valid=bool(int(row["valid"])),
                    )
                    cells[key] = cell
                cell.stats[row["quantity"]] = QuantityStats(
                    float(row["mean"]), float(row["std"]), float(row["q05"]),
                    float(row["q25"]), float(row["q50"]), float(row["q75"]),
                    float(row["q95"]),
                )
        return cls(cells=cells, min_trips=min_trips, day_mode=day_mode)


def _per_second_bins(traj: MatchedKinematics, day_mode: str):
    """(segment_id, TimeBin) per second; None where unmatched or gapped."""
    kin = traj.kin
    out = []
    for i in range(len(kin.t)):
        seg = traj.segment_ids[i]
        if seg is None or kin.gap[i]:
            out.append(None)
            continue
        local = kin.start_time + timedelta(seconds=float(kin.t[i]))
        out.append((seg, time_bin_of(local, day_mode)))
    return out


def build_norms(
    trajectories,
    min_trips: int = DEFAULT_MIN_TRIPS,
    day_mode: str = "weekend_split",
) -> NormsTable:
    """Accumulate matched rides into a table of per-cell distributions.

    Cell statistics are computed from value-sorted pooled samples, so the
    result is identical for any permutation of the input rides. Cells with
    fewer than `min_trips` distinct rides are kept but marked invalid.
    """
    accums: dict[tuple[str, str, int], _CellAccumulator] = {}
    for traj in trajectories:
        kin = traj.kin
        bins = _per_second_bins(traj, day_mode)
        groups: dict[tuple[str, str, int], list[int]] = {}
        for i, sb in enumerate(bins):
            if sb is None:
                continue
            seg, b = sb
            groups.setdefault((seg, b.day_kind, b.slot), []).append(i)
        for key, idx in groups.items():
            idx = np.asarray(idx)
            samples = {
                "speed": kin.speed[idx],
                "lon_accel": kin.lon_accel[idx],
                "lat_accel": kin.lat_accel[idx],
                "abs_lon_accel": np.abs(kin.lon_accel[idx]),
                "abs_lat_accel": np.abs(kin.lat_accel[idx]),
            }
            accums.setdefault(key, _CellAccumulator()).add(kin.ride_id, samples)

    cells = {}
    for key in sorted(accums):
        seg, day_kind, slot = key
        cells[key] = accums[key].finalize(seg, TimeBin(day_kind, slot), min_trips)
    return NormsTable(cells=cells, min_trips=min_trips, day_mode=day_mode)


@dataclass
class DeviationFlag:
    ride_id: str
    segment_id: str
    bin: TimeBin
    quantity: str
    t_start: float
    t_end: float
    t: float  # second of the extreme value
    observed: float
    z_score: float
    direction: str  # "above" or "below"


def flag_deviations(
    traj: MatchedKinematics,
    norms: NormsTable,
    z_threshold: float = 3.0,
    min_run_s: int = 3,
    std_floor: float = 0.1,
) -> list[DeviationFlag]:
    """Flag maximal runs of at least min_run_s seconds with |z| >= z_threshold.

    Seconds on invalid cells, unmatched seconds, and cells whose std is
    below `std_floor` are not scored and break runs. Each flag reports the
    run's extreme value.
    """
    kin = traj.kin
    bins = _per_second_bins(traj, norms.day_mode)
    flags: list[DeviationFlag] = []
    for quantity in FLAG_QUANTITIES:
        values = getattr(kin, quantity)
        run: list[tuple[int, float]] = []

        def close_run():
            if len(run) >= min_run_s:
                i_ext, z_ext = max(run, key=lambda iz: abs(iz[1]))
                seg, b = bins[i_ext]
                flags.append(
                    DeviationFlag(
                        ride_id=kin.ride_id,
                        segment_id=seg,
                        bin=b,
                        quantity=quantity,
                        t_start=float(kin.t[run[0][0]]),
                        t_end=float(kin.t[run[-1][0]]),
                        t=float(kin.t[i_ext]),
                        observed=float(values[i_ext]),
                        z_score=float(z_ext),
                        direction="above" if z_ext > 0 else "below",
                    )
                )
            run.clear()

        for i, sb in enumerate(bins):
            z = None
            if sb is not None:
                cell = norms.get(sb[0], sb[1])
                if cell is not None and cell.valid and cell.stats[quantity].std > std_floor:
                    s = cell.stats[quantity]
                    z = (float(values[i]) - s.mean) / s.std
            eligible = z is not None and abs(z) >= z_threshold
            if run and (not eligible or kin.t[i] - kin.t[run[-1][0]] > 1.5):
                close_run()
            if eligible:
                run.append((i, z))
        close_run()
    return flags


def write_flags_csv(flags, path) -> None:
    header = [
        "ride_id", "segment_id", "day_kind", "slot", "quantity",
        "t_start", "t_end", "extreme_value", "z_score", "direction",
    ]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for f in flags:
            writer.writerow(
                [
                    f.ride_id, f.segment_id, f.bin.day_kind, f.bin.slot, f.quantity,
                    repr(f.t_start), repr(f.t_end), repr(f.observed), repr(f.z_score),
                    f.direction,
                ]
            )


SEGMENT_FEATURES = ("q50_speed", "q95_speed", "q50_abs_lon_accel", "q50_abs_lat_accel")


@dataclass
class SegmentClusterModel:
    k: int
    segment_ids: list[str]
    labels: np.ndarray
    centroids: np.ndarray
    feature_names: tuple = SEGMENT_FEATURES


def segment_feature_matrix(norms: NormsTable):
    """Per-segment feature rows combined across that segment's valid cells.

    Cell quantiles are pooled with sample-count weights: median and 95th
    percentile speed, median absolute longitudinal and lateral
    acceleration.
    """
    by_segment: dict[str, list[SegmentNorm]] = {}
    for cell in norms.valid_cells():
        by_segment.setdefault(cell.segment_id, []).append(cell)
    seg_ids = sorted(by_segment)
    rows = []
    for sid in seg_ids:
        cells = by_segment[sid]
        w = np.asarray([c.sample_count for c in cells], dtype=float)
        w = w / w.sum()
        rows.append(
            [
                float(np.dot(w, [c.stats["speed"].q50 for c in cells])),
                float(np.dot(w, [c.stats["speed"].q95 for c in cells])),
                float(np.dot(w, [c.stats["abs_lon_accel"].q50 for c in cells])),
                float(np.dot(w, [c.stats["abs_lat_accel"].q50 for c in cells])),
            ]
        )
    return seg_ids, np.asarray(rows, dtype=float)


def cluster_segments(
    norms: NormsTable, k: int, restarts: int = 10, seed: int = 0
) -> SegmentClusterModel:
    """Group segments by their norm profile (e.g. highway vs city streets)."""
    from .cluster import kmeans, zscore_columns

    seg_ids, X = segment_feature_matrix(norms)
    if len(seg_ids) < k:
        raise TooFewSegments(f"{len(seg_ids)} segments with valid norms, need >= {k}")
    Xs, _, _, _ = zscore_columns(X)
    model = kmeans(Xs, k, restarts=restarts, seed=seed)
    return SegmentClusterModel(
        k=k, segment_ids=seg_ids, labels=model.assignments, centroids=model.centroids
    )
