from __future__ import annotations

import numpy as np
import pytest

from test_norms import fleet, make_traj
from ridekit.features import (
    FEATURE_NAMES,
    DriverFeatures,
    EmptyAfterStandardize,
    TooFewDrivers,
    extract_driver_features,
    standardize,
)
from ridekit.norms import build_norms


def norms_fleet(n=45, seed=0, mean=10.0, std=1.5, seconds=600):
    rng = np.random.default_rng(seed)
    trajs = fleet(n, lambda i: np.maximum(rng.normal(mean, std, seconds), 0.1))
    return trajs, build_norms(trajs)


def driver_rides(driver_id, speed, lon, lat, n_rides=2, seconds=600):
    out = []
    for r in range(n_rides):
        out.append(
            make_traj(
                f"{driver_id}-r{r}", driver_id,
                np.full(seconds, speed),
                lon_accel=lon(seconds, r),
                lat_accel=lat(seconds, r),
            )
        )
    return out


def pulses(seconds, value, every, width=2, phase=10):
    arr = np.zeros(seconds)
    k = phase
    while k + width < seconds:
        arr[k : k + width] = value
        k += every
    return arr


class TestExtractDriverFeatures:
    def test_aggressive_rates_dominate_conformer(self):
        base, table = norms_fleet()
        calm = driver_rides(
            "calm", 10.0,
            lambda n, r: np.zeros(n),
            lambda n, r: np.zeros(n),
        )
        wild = driver_rides(
            "wild", 10.0,
            lambda n, r: pulses(n, 3.4, 60) + pulses(n, -4.2, 60, phase=40),
            lambda n, r: pulses(n, 3.8, 90, phase=25),
        )
        feats, skips = extract_driver_features(calm + wild, table, min_km=5.0)
        assert skips == []
        by_id = {f.driver_id: f for f in feats}
        assert by_id["wild"].hard_accel_rate >= 3 * max(by_id["calm"].hard_accel_rate, 1e-9)
        assert by_id["wild"].hard_brake_rate >= 3 * max(by_id["calm"].hard_brake_rate, 1e-9)
        assert by_id["wild"].sharp_turn_rate > 0
        assert by_id["calm"].sharp_turn_rate == 0

    def test_short_distance_driver_skipped(self):
        _, table = norms_fleet()
        short = [make_traj("tiny-r0", "tiny", np.full(100, 10.0))]  # ~1 km
        feats, skips = extract_driver_features(short, table, min_km=5.0)
        assert feats == []
        assert len(skips) == 1 and skips[0].driver_id == "tiny"
        assert "below minimum" in skips[0].reason

    def test_conformer_speed_ratio_near_one(self):
        trajs, table = norms_fleet(seed=3)
        feats, _ = extract_driver_features(trajs, table, min_km=3.0)
        assert feats, "norm-defining drivers should survive"
        ratios = [f.mean_speed_ratio for f in feats]
        assert 0.95 <= float(np.mean(ratios)) <= 1.05

    def test_ride_order_invariance(self):
        _, table = norms_fleet(seed=4)
        rides = driver_rides(
            "perm", 9.0,
            lambda n, r: pulses(n, 3.0, 70 + r),
            lambda n, r: np.zeros(n),
            n_rides=3,
        )
        a, _ = extract_driver_features(rides, table, min_km=1.0)
        b, _ = extract_driver_features(list(reversed(rides)), table, min_km=1.0)
        assert a[0] == b[0]

    def test_scaling_lon_accel_monotone(self):
        _, table = norms_fleet(seed=5)
        def build(scale):
            lon = pulses(600, 2.6, 50) - pulses(600, 2.0, 50, phase=35)
            return make_traj("s", "s", np.full(600, 10.0), lon_accel=lon * scale)
        lo, _ = extract_driver_features([build(1.0)], table, min_km=1.0)
        hi, _ = extract_driver_features([build(1.5)], table, min_km=1.0)
        assert hi[0].mean_abs_lon_accel > lo[0].mean_abs_lon_accel
        assert hi[0].hard_accel_rate >= lo[0].hard_accel_rate

    def test_brake_z_nonpositive_for_norm_identical_ride(self):
        rng = np.random.default_rng(6)
        trajs = [
            make_traj(
                f"r{i}", f"d{i}", np.full(400, 10.0),
                lon_accel=rng.normal(-0.5, 1.0, 400),
            )
            for i in range(45)
        ]
        table = build_norms(trajs)
        cell = next(iter(table.cells.values()))
        mean_lon = cell.stats["lon_accel"].mean
        probe = make_traj(
            "probe", "probe", np.full(400, 10.0),
            lon_accel=np.full(400, mean_lon),
        )
        feats, _ = extract_driver_features([probe], table, min_km=1.0)
        assert feats[0].brake_z_p95 <= 0.0

    def test_sustained_threshold_is_respected(self):
        _, table = norms_fleet(seed=7)
        # alternating single-sample spikes separated by gaps count as events
        lon = pulses(600, 3.0, 40, width=1)
        probe = make_traj("p", "p", np.full(600, 10.0), lon_accel=lon)
        feats, _ = extract_driver_features([probe], table, min_km=1.0)
        n_pulses = int(np.count_nonzero(lon))
        assert feats[0].hard_accel_rate == pytest.approx(
            n_pulses / (feats[0].distance_km / 100.0)
        )


class TestStandardize:
    def _mk(self, vec, driver="d"):
        return DriverFeatures(driver, *[float(v) for v in vec])

    def test_two_drivers_become_plus_minus_one(self):
        a = self._mk(np.arange(10), "a")
        b = self._mk(np.arange(10) + 1.0, "b")
        matrix = standardize([a, b])
        assert np.allclose(np.abs(matrix.X), 1.0)
        assert np.allclose(matrix.X[0], -matrix.X[1])

    def test_identical_drivers_everything_dropped(self):
        rows = [self._mk(np.full(10, 2.0), f"d{i}") for i in range(4)]
        with pytest.raises(EmptyAfterStandardize):
            standardize(rows)

    def test_single_driver_rejected(self):
        with pytest.raises(TooFewDrivers):
            standardize([self._mk(np.arange(10))])

    def test_random_matrix_columns_standardized(self):
        rng = np.random.default_rng(8)
        rows = [self._mk(rng.normal(0, 3, 10), f"d{i}") for i in range(50)]
        matrix = standardize(rows)
        assert matrix.X.shape == (50, 10)
        assert np.max(np.abs(matrix.X.mean(axis=0))) < 1e-9
        assert np.max(np.abs(matrix.X.std(axis=0) - 1.0)) < 1e-9

    def test_constant_column_recorded(self):
        rng = np.random.default_rng(9)
        rows = []
        for i in range(20):
            vec = rng.normal(0, 1, 10)
            vec[2] = 5.0  # hard_accel_rate constant
            rows.append(self._mk(vec, f"d{i}"))
        matrix = standardize(rows)
        assert FEATURE_NAMES[2] in matrix.dropped_columns
        assert matrix.X.shape[1] == 9

    def test_idempotent_on_surviving_columns(self):
        rng = np.random.default_rng(10)
        rows = [self._mk(rng.normal(0, 2, 10), f"d{i}") for i in range(30)]
        matrix = standardize(rows)
        k = matrix.X.shape[1]
        padded = [
            self._mk(np.concatenate([matrix.X[i], np.zeros(10 - k)]), f"d{i}")
            for i in range(30)
        ]
        matrix2 = standardize(padded)
        assert np.max(np.abs(matrix2.X - matrix.X)) < 1e-9
