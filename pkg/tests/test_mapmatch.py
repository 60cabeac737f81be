from __future__ import annotations

import numpy as np
import pytest

from conftest import make_ride
from helpers import chord_point_segment_m, nearest_segment_brute_force
from ridekit import synth
from ridekit.geo import haversine_m, point_along_polyline
from ridekit.mapmatch import (
    BatchTooLarge,
    FixtureMatcher,
    MatchCache,
    MatchedTrajectory,
    MatcherParams,
    OfflineMatcher,
    RemoteUnavailable,
    RoadNetwork,
    RoadSegment,
    attach_segments,
    iter_chunks,
    match_ride,
    record_fixture,
    snap_batch,
)

LAT0, LON0 = 37.76, -122.44


def straight_segment(sid, lat, lon_a, lon_b):
    return RoadSegment(sid, np.array([[lat, lon_a], [lat, lon_b]]))


class TestSnapBatch:
    def test_point_on_segment_interior(self):
        seg = straight_segment("s1", LAT0, LON0, LON0 + 0.004)
        net = RoadNetwork([seg])
        out = snap_batch([(LAT0, LON0 + 0.002, 0.0)], net)
        assert out[0].segment_id == "s1"
        assert out[0].snap_distance_m < 1e-6
        assert 0.0 < out[0].along < 1.0

    def test_equidistant_tie_goes_to_smaller_id(self):
        d = 0.0003
        net = RoadNetwork(
            [
                RoadSegment("b-seg", np.array([[LAT0 - 0.001, LON0 + d], [LAT0 + 0.001, LON0 + d]])),
                RoadSegment("a-seg", np.array([[LAT0 - 0.001, LON0 - d], [LAT0 + 0.001, LON0 - d]])),
            ]
        )
        out = snap_batch([(LAT0, LON0, 0.0)], net)
        assert out[0].segment_id == "a-seg"

    def test_batch_too_large(self):
        net = RoadNetwork([straight_segment("s1", LAT0, LON0, LON0 + 0.004)])
        points = [(LAT0, LON0, float(k)) for k in range(101)]
        with pytest.raises(BatchTooLarge):
            snap_batch(points, net)

    def test_far_point_is_unmatched_not_error(self):
        net = RoadNetwork([straight_segment("s1", LAT0, LON0, LON0 + 0.004)])
        out = snap_batch([(LAT0 + 0.5, LON0, 0.0), (LAT0, LON0 + 0.001, 1.0)], net)
        assert out[0] is None
        assert out[1] is not None

    def test_noisy_trace_mostly_recovers_truth(self, grid_network):
        ride, truth = synth.generate_ride(
            grid_network, synth.ARCHETYPES["conformer"], 90, 17,
            gps_sigma=5.0, start_at_cruise=True,
        )
        pts = [
            (float(ride.gps.lat[i]), float(ride.gps.lon[i]), float(ride.gps.t[i]))
            for i in range(20)
        ]
        out = snap_batch(pts, grid_network)
        hits = sum(
            1 for mp, true_sid in zip(out, truth.segment_id[:20])
            if mp is not None and mp.segment_id == true_sid
        )
        assert hits >= 19

    def test_snap_distance_is_great_circle_and_minimal(self, grid_network):
        rng = np.random.default_rng(3)
        segs = grid_network.segments
        for _ in range(25):
            seg = segs[int(rng.integers(len(segs)))]
            base = seg.polyline[0]
            lat = float(base[0] + rng.normal(0, 15) / 111_000)
            lon = float(base[1] + rng.normal(0, 15) / 88_000)
            out = snap_batch([(lat, lon, 0.0)], grid_network)[0]
            if out is None:
                continue
            direct = haversine_m(lat, lon, out.snap_lat, out.snap_lon)
            assert abs(out.snap_distance_m - direct) < 1e-6
            # closest-point check against dense sampling of the reported segment
            poly = grid_network.by_id[out.segment_id].polyline
            dense = min(
                haversine_m(lat, lon, *point_along_polyline(poly, f))
                for f in np.linspace(0, 1, 400)
            )
            assert out.snap_distance_m <= dense + 1e-3
            # and the snapped point itself lies on the segment
            snapped_to_seg = min(
                chord_point_segment_m(out.snap_lat, out.snap_lon, poly[i], poly[i + 1])
                for i in range(len(poly) - 1)
            )
            assert snapped_to_seg < 1e-3

    def test_zero_costs_degenerate_to_nearest_segment(self, grid_network):
        # with no transition costs the decoder must equal per-point brute force
        assert len(grid_network) <= 200
        params = MatcherParams(
            segment_switch_cost=0.0, gap_cost_per_m=0.0, candidate_radius_m=1e6
        )
        ride, _ = synth.generate_ride(
            grid_network, synth.ARCHETYPES["conformer"], 60, 23, gps_sigma=8.0
        )
        pts = [
            (float(ride.gps.lat[i]), float(ride.gps.lon[i]), float(ride.gps.t[i]))
            for i in range(len(ride.gps))
        ]
        out = snap_batch(pts[:60], grid_network, params)
        for (lat, lon, _), mp in zip(pts[:60], out):
            want, _ = nearest_segment_brute_force(lat, lon, grid_network.segments)
            assert mp.segment_id == want


class TestMatchRide:
    def test_chunking_arithmetic(self):
        chunks = list(iter_chunks(250, 100, 5))
        assert chunks == [(0, 100), (95, 195), (190, 250)]
        assert len(chunks) == 3

    def test_single_chunk_when_small(self):
        assert list(iter_chunks(80, 100, 5)) == [(0, 80)]

    def test_l_shaped_route_has_one_turn_window(self):
        a = RoadSegment("l-a", np.array([[LAT0, LON0], [LAT0, LON0 + 0.004]]))
        b = RoadSegment("l-b", np.array([[LAT0, LON0 + 0.004], [LAT0 + 0.004, LON0 + 0.004]]))
        net = RoadNetwork([a, b])
        leg1 = haversine_m(LAT0, LON0, LAT0, LON0 + 0.004)
        leg2 = haversine_m(LAT0, LON0 + 0.004, LAT0 + 0.004, LON0 + 0.004)
        v = 10.0
        pts = []
        for k in range(int((leg1 + leg2) / v)):
            s = k * v
            if s <= leg1:
                pts.append((LAT0, LON0 + 0.004 * s / leg1))
            else:
                pts.append((LAT0 + 0.004 * (s - leg1) / leg2, LON0 + 0.004))
        ride = make_ride(
            np.arange(len(pts), dtype=float),
            pts,
            np.full(len(pts), v),
            np.arange(0, len(pts), 0.1),
            (np.ones(len(pts) * 10), np.zeros(len(pts) * 10), np.zeros(len(pts) * 10)),
        )
        traj = match_ride(ride, net)
        assert len(traj.turn_windows) == 1
        t_corner = leg1 / v
        t_start, t_end = traj.turn_windows[0]
        assert t_start <= t_corner <= t_end

    def test_warm_cache_identical_and_no_decoding(self, grid_network, tmp_path):
        cache = MatchCache(tmp_path / "cache.csv")
        ride, _ = synth.generate_ride(
            grid_network, synth.ARCHETYPES["conformer"], 120, 31, gps_sigma=5.0
        )
        cold = match_ride(ride, grid_network, cache=cache)
        cache.flush()
        warm_cache = MatchCache(tmp_path / "cache.csv")
        warm = match_ride(ride, grid_network, cache=warm_cache)
        assert warm.n_decoded == 0
        assert warm.n_from_cache > 0
        for a, b in zip(cold.points, warm.points):
            if a is None:
                assert b is None
            else:
                assert (a.segment_id, a.along, a.snap_lat) == (
                    b.segment_id, b.along, b.snap_lat,
                )

    def test_batching_invariance(self, grid_network):
        ride, _ = synth.generate_ride(
            grid_network, synth.ARCHETYPES["conformer"], 100, 37, gps_sigma=4.0
        )
        one = match_ride(ride, grid_network, params=MatcherParams(chunk_size=100))
        many = match_ride(
            ride, grid_network, params=MatcherParams(chunk_size=40, chunk_overlap=5)
        )
        assert [p.segment_id if p else None for p in one.points] == [
            p.segment_id if p else None for p in many.points
        ]

    def test_deterministic(self, grid_network):
        ride, _ = synth.generate_ride(
            grid_network, synth.ARCHETYPES["aggressive"], 90, 41, gps_sigma=6.0
        )
        a = match_ride(ride, grid_network)
        b = match_ride(ride, grid_network)
        assert [(p.segment_id, p.along) if p else None for p in a.points] == [
            (p.segment_id, p.along) if p else None for p in b.points
        ]


class TestMatcherAdapters:
    def _batches(self, grid_network):
        ride, _ = synth.generate_ride(
            grid_network, synth.ARCHETYPES["conformer"], 90, 53, gps_sigma=4.0
        )
        pts = [
            (float(ride.gps.lat[i]), float(ride.gps.lon[i]), float(ride.gps.t[i]))
            for i in range(len(ride.gps))
        ]
        return [pts[:45], pts[45:]]

    def test_fixture_replay_round_trip(self, grid_network, tmp_path):
        batches = self._batches(grid_network)
        offline = OfflineMatcher(grid_network)
        record_fixture(offline, batches, tmp_path / "fixture.json")
        replay = FixtureMatcher(tmp_path / "fixture.json")
        for batch in batches:
            a = offline.match_batch(batch)
            b = replay.match_batch(batch)
            for x, y in zip(a, b):
                if x is None:
                    assert y is None
                else:
                    assert (x.segment_id, x.snap_lat, x.snap_lon, x.along) == (
                        y.segment_id, y.snap_lat, y.snap_lon, y.along,
                    )
                    assert x.snap_distance_m == y.snap_distance_m

    def test_missing_fixture_raises_remote_unavailable(self, tmp_path):
        with pytest.raises(RemoteUnavailable):
            FixtureMatcher(tmp_path / "nope.json")

    def test_unknown_request_raises_remote_unavailable(self, grid_network, tmp_path):
        batches = self._batches(grid_network)
        record_fixture(OfflineMatcher(grid_network), batches[:1], tmp_path / "f.json")
        replay = FixtureMatcher(tmp_path / "f.json")
        with pytest.raises(RemoteUnavailable):
            replay.match_batch(batches[1])


class TestAttachSegments:
    def test_join_by_nearest_fix(self, grid_network):
        ride, truth = synth.generate_ride(
            grid_network, synth.ARCHETYPES["conformer"], 90, 61, gps_sigma=3.0
        )
        traj = match_ride(ride, grid_network)
        from ridekit.signal import LANDSCAPE_DEFAULT, to_vehicle_frame

        kin = to_vehicle_frame(ride, LANDSCAPE_DEFAULT)
        joined = attach_segments(kin, traj)
        assert len(joined.segment_ids) == len(kin.t)
        assert sum(s is not None for s in joined.segment_ids) > 0.9 * len(kin.t)

    def test_no_fixes_leaves_unmatched(self, grid_network):
        from ridekit.signal import LANDSCAPE_DEFAULT, to_vehicle_frame

        ride, _ = synth.generate_ride(
            grid_network, synth.ARCHETYPES["conformer"], 90, 67, gps_sigma=3.0
        )
        kin = to_vehicle_frame(ride, LANDSCAPE_DEFAULT)
        empty = MatchedTrajectory(ride.ride_id, [None] * len(ride.gps), [])
        joined = attach_segments(kin, empty)
        assert all(s is None for s in joined.segment_ids)
