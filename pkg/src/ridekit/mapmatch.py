"""Snap noisy GPS traces to road segments.

The default matcher decodes each batch of fixes with a small hidden-state
dynamic program: candidate states are nearby segments, the emission cost
grows with the squared snap distance, and transitions pay for switching
segments and for disagreement between the straight-line gap and the gap
between snapped positions. That keeps trajectories from darting between
parallel roads at intersections.

Batches are capped at MAX_BATCH_POINTS fixes, mirroring the contract of
hosted road-snapping APIs, and results are cached by quantized coordinate
so repeated fixes are never re-decoded.
"""

from __future__ import annotations

import json
from bisect import insort
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import RidekitError
from .geo import (
    LocalProjection,
    haversine_m,
    initial_bearing_deg,
    project_point_to_polyline,
    wrap_deg,
)
from .ingest import Ride

MAX_BATCH_POINTS = 100

ROAD_CLASSES = ("highway", "arterial", "local")


class MatchError(RidekitError):
    pass


class BatchTooLarge(MatchError):
    pass


class NoCandidate(MatchError):
    pass


class RemoteUnavailable(MatchError):
    pass


class MalformedResponse(MatchError):
    pass


@dataclass
class MatcherParams:
    candidate_radius_m: float = 50.0
    sigma_m: float = 5.0
    segment_switch_cost: float = 3.0
    gap_cost_per_m: float = 0.1
    chunk_size: int = 100
    chunk_overlap: int = 5
    turn_angle_deg: float = 40.0
    turn_window_s: float = 5.0


@dataclass
class GpsErrorModel:
    """Bivariate-normal GPS position error; per-axis std in meters.

    Field-realistic receivers sit between 2 and 8 meters and that range is
    enforced; noise-free simulation passes sigma=None to the generator
    instead of building a degenerate model.
    """

    sigma: float

    def __post_init__(self):
        if not 2.0 <= self.sigma <= 8.0:
            raise MatchError(f"gps sigma {self.sigma} outside the realistic [2, 8] m range")


@dataclass
class RoadSegment:
    segment_id: str
    polyline: np.ndarray  # (k, 2) rows of (lat, lon)
    road_class: str = "local"
    speed_limit_mps: float | None = None

    def __post_init__(self):
        self.polyline = np.asarray(self.polyline, dtype=float)
        if len(self.polyline) < 2:
            raise MatchError(f"segment {self.segment_id}: polyline needs >= 2 vertices")
        if np.any(np.all(np.diff(self.polyline, axis=0) == 0.0, axis=1)):
            raise MatchError(f"segment {self.segment_id}: repeated consecutive vertices")


class RoadNetwork:
    """Road segments plus a uniform-grid spatial index over their bounds."""

    _CELL_M = 250.0

    def __init__(self, segments: list[RoadSegment]):
        ids = [s.segment_id for s in segments]
        if len(set(ids)) != len(ids):
            raise MatchError("segment ids must be unique")
        self.segments = sorted(segments, key=lambda s: s.segment_id)
        self.by_id = {s.segment_id: s for s in self.segments}
        lat0 = float(np.mean([s.polyline[:, 0].mean() for s in self.segments]))
        lon0 = float(np.mean([s.polyline[:, 1].mean() for s in self.segments]))
        self.projection = LocalProjection(lat0, lon0)
        self._xy = {}
        self._bbox = {}
        self._grid: dict[tuple[int, int], list[str]] = {}
        for seg in self.segments:
            xs, ys = self.projection.to_xy(seg.polyline[:, 0], seg.polyline[:, 1])
            self._xy[seg.segment_id] = (np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
            bbox = (xs.min(), ys.min(), xs.max(), ys.max())
            self._bbox[seg.segment_id] = bbox
            for ci in range(int(bbox[0] // self._CELL_M), int(bbox[2] // self._CELL_M) + 1):
                for cj in range(int(bbox[1] // self._CELL_M), int(bbox[3] // self._CELL_M) + 1):
                    self._grid.setdefault((ci, cj), []).append(seg.segment_id)
        cells = list(self._grid)
        self._cell_lo = (min(c[0] for c in cells), min(c[1] for c in cells))
        self._cell_hi = (max(c[0] for c in cells), max(c[1] for c in cells))

    def __len__(self) -> int:
        return len(self.segments)

    def _near_ids(self, x: float, y: float, radius: float) -> list[str]:
        out: list[str] = []
        c = self._CELL_M
        ci_lo = max(int((x - radius) // c), self._cell_lo[0])
        ci_hi = min(int((x + radius) // c), self._cell_hi[0])
        cj_lo = max(int((y - radius) // c), self._cell_lo[1])
        cj_hi = min(int((y + radius) // c), self._cell_hi[1])
        for ci in range(ci_lo, ci_hi + 1):
            for cj in range(cj_lo, cj_hi + 1):
                for sid in self._grid.get((ci, cj), ()):
                    if sid not in out:
                        insort(out, sid)
        return out

    def candidates_near(self, lat: float, lon: float, radius: float) -> list["Candidate"]:
        """Segments within `radius` meters, with snapped position per segment.

        The snap itself is refined with a projection centered on the query
        latitude so distances are good to millimeters at network scale.
        Results are sorted by segment id.
        """
        x, y = self.projection.to_xy(lat, lon)
        local = LocalProjection(lat, lon)
        out = []
        for sid in self._near_ids(float(x), float(y), radius * 1.05 + 10.0):
            x0, y0, x1, y1 = self._bbox[sid]
            dx = max(x0 - x, 0.0, x - x1)
            dy = max(y0 - y, 0.0, y - y1)
            if dx * dx + dy * dy > (radius * 1.05 + 10.0) ** 2:
                continue
            seg = self.by_id[sid]
            xs, ys = local.to_xy(seg.polyline[:, 0], seg.polyline[:, 1])
            dist, along, qx, qy = project_point_to_polyline(0.0, 0.0, xs, ys)
            if dist <= radius:
                snap_lat, snap_lon = local.to_latlon(qx, qy)
                out.append(Candidate(sid, float(snap_lat), float(snap_lon), along, dist))
        return out

    @classmethod
    def from_geojson(cls, path) -> "RoadNetwork":
        data = json.loads(Path(path).read_text())
        segments = []
        for feature in data.get("features", []):
            geom = feature.get("geometry", {})
            if geom.get("type") != "LineString":
                continue
            props = feature.get("properties", {})
            coords = np.asarray(geom["coordinates"], dtype=float)[:, ::-1]  # lon,lat -> lat,lon
            segments.append(
                RoadSegment(
                    segment_id=str(props["segment_id"]),
                    polyline=coords,
                    road_class=props.get("road_class", "local"),
                    speed_limit_mps=props.get("speed_limit_mps"),
                )
            )
        return cls(segments)

    def to_geojson(self, path=None) -> str:
        features = []
        for seg in self.segments:
            props = {"segment_id": seg.segment_id, "road_class": seg.road_class}
            if seg.speed_limit_mps is not None:
                props["speed_limit_mps"] = seg.speed_limit_mps
            features.append(
                {
                    "type": "Feature",
                    "properties": props,
                    "geometry": {
                        "type": "LineString",
                        "coordinates": [[float(lon), float(lat)] for lat, lon in seg.polyline],
                    },
                }
            )
        text = json.dumps({"type": "FeatureCollection", "features": features}, indent=None)
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class Candidate:
    segment_id: str
    snap_lat: float
    snap_lon: float
    along: float
    distance_m: float


@dataclass
class MatchedPoint:
    lat: float
    lon: float
    t: float
    segment_id: str
    snap_lat: float
    snap_lon: float
    along: float
    snap_distance_m: float


@dataclass
class MatchedTrajectory:
    ride_id: str
    points: list  # MatchedPoint | None, aligned with the GPS fixes
    turn_windows: list  # (t_start, t_end) pairs
    n_from_cache: int = 0
    n_decoded: int = 0

    def matched(self) -> list[MatchedPoint]:
        return [p for p in self.points if p is not None]


class MatchCache:
    """Match results keyed by coordinate quantized to 1e-5 degrees.

    The backing file is append-only, one record per line:
    `lat5,lon5,segment_id,snap_lat,snap_lon,along`. The first record seen
    for a key wins; later additions for the same key are ignored.
    """

    QUANT = 1e5

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._store: dict[tuple[int, int], Candidate] = {}
        self._new: list[tuple[tuple[int, int], Candidate]] = []
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                lat5, lon5, sid, slat, slon, along = line.split(",")
                key = (int(lat5), int(lon5))
                if key not in self._store:
                    self._store[key] = Candidate(
                        sid, float(slat), float(slon), float(along), 0.0
                    )

    @classmethod
    def key_for(cls, lat: float, lon: float) -> tuple[int, int]:
        return (int(round(lat * cls.QUANT)), int(round(lon * cls.QUANT)))

    def __len__(self) -> int:
        return len(self._store)

    def lookup(self, lat: float, lon: float) -> Candidate | None:
        return self._store.get(self.key_for(lat, lon))

    def add(self, lat: float, lon: float, cand: Candidate) -> None:
        key = self.key_for(lat, lon)
        if key in self._store:
            return
        self._store[key] = cand
        self._new.append((key, cand))

    def flush(self) -> int:
        """Append records added since the last flush; returns how many."""
        if self.path is None or not self._new:
            n = len(self._new)
            self._new = []
            return n
        with self.path.open("a") as fh:
            for (lat5, lon5), c in self._new:
                fh.write(
                    f"{lat5},{lon5},{c.segment_id},{c.snap_lat!r},{c.snap_lon!r},{c.along!r}\n"
                )
        n = len(self._new)
        self._new = []
        return n


def _decode(points, network: RoadNetwork, params: MatcherParams, fixed=None):
    """Decode one batch of (lat, lon, t) fixes to matched points.

    `fixed` maps local indices to pre-decided Candidates (cache hits); they
    participate in the dynamic program as single-state steps so the
    surrounding decoding keeps its sequence context.
    """
    fixed = fixed or {}
    n = len(points)
    cand_lists: list[list[Candidate]] = []
    for i, (lat, lon, _) in enumerate(points):
        if i in fixed:
            cand_lists.append([fixed[i]])
        else:
            cand_lists.append(network.candidates_near(lat, lon, params.candidate_radius_m))

    two_sigma2 = 2.0 * params.sigma_m**2
    results: list[MatchedPoint | None] = [None] * n
    run_start = None
    costs: list[float] = []
    back: list[int] = []
    all_costs: list[list[float]] = []
    all_back: list[list[int]] = []

    def emit(run_start: int, run_end: int) -> None:
        if run_start is None or run_end <= run_start:
            return
        best = 0
        for j in range(1, len(all_costs[run_end - run_start - 1])):
            if all_costs[run_end - run_start - 1][j] < all_costs[run_end - run_start - 1][best]:
                best = j
        idx = best
        for pos in range(run_end - 1, run_start - 1, -1):
            lat, lon, t = points[pos]
            c = cand_lists[pos][idx]
            snap_d = haversine_m(lat, lon, c.snap_lat, c.snap_lon)
            results[pos] = MatchedPoint(
                lat, lon, t, c.segment_id, c.snap_lat, c.snap_lon, c.along, snap_d
            )
            idx = all_back[pos - run_start][idx]

    for i in range(n):
        cands = cand_lists[i]
        if not cands:
            emit(run_start, i)
            run_start = None
            all_costs, all_back = [], []
            continue
        emis = [
            0.0 if i in fixed else (c.distance_m**2) / two_sigma2 for c in cands
        ]
        if run_start is None:
            run_start = i
            costs = emis
            back = [-1] * len(cands)
        else:
            prev = cand_lists[i - 1]
            gap = haversine_m(points[i - 1][0], points[i - 1][1], points[i][0], points[i][1])
            costs = []
            back = []
            for j, c in enumerate(cands):
                best_cost = None
                best_p = 0
                for p, pc in enumerate(prev):
                    snapped_gap = haversine_m(pc.snap_lat, pc.snap_lon, c.snap_lat, c.snap_lon)
                    trans = params.gap_cost_per_m * abs(gap - snapped_gap)
                    if pc.segment_id != c.segment_id:
                        trans += params.segment_switch_cost
                    total = all_costs[-1][p] + trans
                    if best_cost is None or total < best_cost:
                        best_cost = total
                        best_p = p
                costs.append(best_cost + emis[j])
                back.append(best_p)
        all_costs.append(costs)
        all_back.append(back)
    emit(run_start, n)
    return results


def snap_batch(points, network: RoadNetwork, params: MatcherParams | None = None):
    """Match one batch of up to MAX_BATCH_POINTS (lat, lon, t) fixes.

    Returns a list aligned with the input; entries are MatchedPoint, or
    None where no segment lies within the candidate radius. Cost ties are
    broken toward the smaller segment id (candidates are id-sorted and
    comparisons are strict).
    """
    if len(points) == 0:
        raise MatchError("empty batch")
    if len(points) > MAX_BATCH_POINTS:
        raise BatchTooLarge(f"{len(points)} points exceeds the {MAX_BATCH_POINTS}-point limit")
    return _decode(list(points), network, params or MatcherParams())


def iter_chunks(n: int, size: int = 100, overlap: int = 5):
    """Consecutive [start, end) chunks of at most `size` with `overlap` shared points."""
    if n <= 0:
        return
    start = 0
    while True:
        end = min(start + size, n)
        yield start, end
        if end >= n:
            return
        start = end - overlap


class OfflineMatcher:
    """In-process matcher; supports pinning cached points inside a batch."""

    supports_fixed = True

    def __init__(self, network: RoadNetwork, params: MatcherParams | None = None):
        self.network = network
        self.params = params or MatcherParams()

    def match_batch(self, points, fixed=None):
        if len(points) > MAX_BATCH_POINTS:
            raise BatchTooLarge(
                f"{len(points)} points exceeds the {MAX_BATCH_POINTS}-point limit"
            )
        return _decode(list(points), self.network, self.params, fixed=fixed)


class FixtureMatcher:
    """Replays recorded request/response pairs instead of calling a service.

    The fixture file is a JSON list of {"request": [[lat, lon, t], ...],
    "response": [...]} objects. A request with no recorded response raises
    RemoteUnavailable, standing in for an unreachable endpoint.
    """

    supports_fixed = False

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise RemoteUnavailable(f"fixture file {self.path} does not exist")
        try:
            entries = json.loads(self.path.read_text())
            self._responses = {
                self._key(e["request"]): e["response"] for e in entries
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad fixture file {self.path}: {exc}") from exc

    @staticmethod
    def _key(request) -> tuple:
        return tuple((round(p[0], 7), round(p[1], 7)) for p in request)

    def match_batch(self, points, fixed=None):
        key = self._key([[p[0], p[1], p[2]] for p in points])
        if key not in self._responses:
            raise RemoteUnavailable(f"no recorded response for a {len(points)}-point request")
        out = []
        try:
            for raw, (lat, lon, t) in zip(self._responses[key], points, strict=True):
                if raw is None:
                    out.append(None)
                    continue
                out.append(
                    MatchedPoint(
                        lat,
                        lon,
                        t,
                        str(raw["segment_id"]),
                        float(raw["snap_lat"]),
                        float(raw["snap_lon"]),
                        float(raw["along"]),
                        float(raw["snap_distance_m"]),
                    )
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad fixture response: {exc}") from exc
        return out


def record_fixture(matcher, batches, path) -> None:
    """Run batches through a matcher and store request/response pairs."""
    entries = []
    for batch in batches:
        response = matcher.match_batch(batch)
        entries.append(
            {
                "request": [[p[0], p[1], p[2]] for p in batch],
                "response": [
                    None
                    if mp is None
                    else {
                        "segment_id": mp.segment_id,
                        "snap_lat": mp.snap_lat,
                        "snap_lon": mp.snap_lon,
                        "along": mp.along,
                        "snap_distance_m": mp.snap_distance_m,
                    }
                    for mp in response
                ],
            }
        )
    Path(path).write_text(json.dumps(entries))


def _turn_windows(points, params: MatcherParams):
    """Maximal intervals where matched heading swings more than the threshold.

    Heading at a fix is the bearing to the next matched fix at least 3 m
    away; a window opens whenever the wrapped heading change across any
    pair of fixes within turn_window_s exceeds turn_angle_deg.
    """
    fixes = [(p.t, p.snap_lat, p.snap_lon) for p in points if p is not None]
    if len(fixes) < 2:
        return []
    headings = []
    for i, (t, lat, lon) in enumerate(fixes):
        h = None
        for j in range(i + 1, min(i + 6, len(fixes))):
            if haversine_m(lat, lon, fixes[j][1], fixes[j][2]) >= 3.0:
                h = initial_bearing_deg(lat, lon, fixes[j][1], fixes[j][2])
                break
        headings.append(h)
    marks = []
    for i in range(len(fixes)):
        if headings[i] is None:
            continue
        for j in range(i + 1, len(fixes)):
            if fixes[j][0] - fixes[i][0] > params.turn_window_s:
                break
            if headings[j] is None:
                continue
            if abs(wrap_deg(headings[j] - headings[i])) > params.turn_angle_deg:
                marks.append((fixes[i][0], fixes[j][0]))
    if not marks:
        return []
    marks.sort()
    merged = [list(marks[0])]
    for a, b in marks[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def match_ride(
    ride: Ride,
    network: RoadNetwork | None = None,
    cache: MatchCache | None = None,
    params: MatcherParams | None = None,
    matcher=None,
) -> MatchedTrajectory:
    """Match a whole ride's GPS trace, chunked to the batch-size limit.

    Chunks overlap by a few points and later chunks win on the overlap.
    When a cache is provided, fixes whose quantized coordinate is already
    cached are pinned rather than re-decoded, and fresh decisions are added
    back to the cache (first decision per key wins).
    """
    params = params or MatcherParams()
    if matcher is None:
        if network is None:
            raise MatchError("either a network or a matcher is required")
        matcher = OfflineMatcher(network, params)

    gps = ride.gps
    if len(gps) < 2:
        raise MatchError("matching needs at least 2 GPS fixes")
    points = [(float(gps.lat[i]), float(gps.lon[i]), float(gps.t[i])) for i in range(len(gps))]

    results: list[MatchedPoint | None] = [None] * len(points)
    n_from_cache = 0
    n_decoded = 0

    for a, b in iter_chunks(len(points), params.chunk_size, params.chunk_overlap):
        chunk = points[a:b]
        fixed: dict[int, Candidate] = {}
        if cache is not None:
            for i, (lat, lon, _) in enumerate(chunk):
                hit = cache.lookup(lat, lon)
                if hit is not None:
                    fixed[i] = hit
        if getattr(matcher, "supports_fixed", False):
            matched = matcher.match_batch(chunk, fixed=fixed)
        elif len(fixed) == len(chunk):
            matched = [None] * len(chunk)
            for i, c in fixed.items():
                lat, lon, t = chunk[i]
                matched[i] = MatchedPoint(
                    lat, lon, t, c.segment_id, c.snap_lat, c.snap_lon, c.along,
                    haversine_m(lat, lon, c.snap_lat, c.snap_lon),
                )
        else:
            pending = [i for i in range(len(chunk)) if i not in fixed]
            matched = [None] * len(chunk)
            sub = [chunk[i] for i in pending]
            decoded = matcher.match_batch(sub)
            for i, mp in zip(pending, decoded):
                matched[i] = mp
            for i, c in fixed.items():
                lat, lon, t = chunk[i]
                matched[i] = MatchedPoint(
                    lat, lon, t, c.segment_id, c.snap_lat, c.snap_lon, c.along,
                    haversine_m(lat, lon, c.snap_lat, c.snap_lon),
                )
        for i, mp in enumerate(matched):
            was_fixed = i in fixed
            if a + i < b:
                results[a + i] = mp
            if was_fixed:
                continue
            if mp is not None and cache is not None:
                cache.add(
                    mp.lat,
                    mp.lon,
                    Candidate(mp.segment_id, mp.snap_lat, mp.snap_lon, mp.along, 0.0),
                )
        n_from_cache += len(fixed)
        n_decoded += len(chunk) - len(fixed)

    return MatchedTrajectory(
        ride_id=ride.ride_id,
        points=results,
        turn_windows=_turn_windows(results, params),
        n_from_cache=n_from_cache,
        n_decoded=n_decoded,
    )


@dataclass
class MatchedKinematics:
    """Vehicle kinematics joined with the matched segment per second."""

    kin: object  # signal.VehicleKinematics
    segment_ids: list  # str | None per second

    def __len__(self) -> int:
        return len(self.segment_ids)


def attach_segments(kin, traj: MatchedTrajectory) -> MatchedKinematics:
    """Join 1 Hz kinematics with per-second segment ids from the match.

    Each grid second takes the segment of the nearest matched fix within
    half a second; seconds with no such fix stay unmatched.
    """
    fixes = [(p.t, p.segment_id) for p in traj.points if p is not None]
    seg_ids: list = [None] * len(kin.t)
    if fixes:
        times = np.asarray([f[0] for f in fixes])
        for i, tk in enumerate(kin.t):
            j = int(np.argmin(np.abs(times - tk)))
            if abs(times[j] - tk) <= 0.5:
                seg_ids[i] = fixes[j][1]
    return MatchedKinematics(kin=kin, segment_ids=seg_ids)
