"""Synthetic road networks and multi-sensor ride logs with planted behavior.

The generator builds a labeled street grid (plus an optional perimeter
highway), walks random routes over it, integrates a trapezoidal speed
profile at 10 Hz, and emits phone-frame sensor files in the exact ingest
layout together with a ground-truth sidecar. Every downstream stage can
therefore be tested against known routes, kinematics, rotations, and
planted hard-maneuver events.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import RidekitError
from .geo import (
    haversine_m,
    initial_bearing_deg,
    lat_step_deg,
    lon_step_deg,
    offset_latlon,
    wrap_deg,
)
from .ingest import ACCEL, GYRO, MAG, MOTION, AxisStream, GpsStream, Ride, serialize_ride
from .mapmatch import GpsErrorModel, RoadNetwork, RoadSegment
from .signal import GRAVITY_MPS2, AxisMapping

LOCAL_LIMIT_MPS = 11.2
ARTERIAL_LIMIT_MPS = 15.0
HIGHWAY_LIMIT_MPS = 29.0

BASE_ACCEL_MPS2 = 1.4
BASE_DECEL_MPS2 = 1.8
EVENT_BRAKE_MPS2 = -4.5
EVENT_ACCEL_MPS2 = 3.2
EVENT_LEN_S = 2.0
EVENT_COOLDOWN_S = 5.0

CORNER_ANGLE_DEG = 25.0
TURN_ZONE_M = 12.0
V_TURN_NORMAL = 3.5
V_TURN_SHARP = 6.0

GYRO_NOISE_RADS = 0.02
MOTION_NOISE_RADS = 0.01
MAG_NOISE_UT = 0.5
GPS_SPEED_NOISE_MPS = 0.3
GPS_HEADING_NOISE_DEG = 2.0
MAG_FIELD_NED_UT = (22.0, 5.0, -43.0)

DT = 0.1


class SynthError(RidekitError):
    pass


@dataclass(frozen=True)
class Archetype:
    """Planted driver profile; rates are events per 100 km."""

    name: str
    target_speed_ratio: float
    hard_accel_per_100km: float
    hard_brake_per_100km: float
    sharp_turn_prob: float
    accel_noise_sigma: float  # m/s^2, per raw 10 Hz sample
    speed_cap_mps: float | None = None

    def __post_init__(self):
        if min(self.hard_accel_per_100km, self.hard_brake_per_100km) < 0:
            raise SynthError("event rates must be non-negative")
        if not 0.0 <= self.sharp_turn_prob <= 1.0:
            raise SynthError("sharp_turn_prob must be in [0, 1]")


ARCHETYPES = {
    a.name: a
    for a in (
        Archetype("conformer", 1.00, 0.0, 0.0, 0.02, 0.60),
        Archetype("slow_cautious", 0.86, 0.0, 95.0, 0.02, 0.60),
        Archetype("aggressive", 1.00, 90.0, 60.0, 0.08, 0.60),
        Archetype("sharp_turner", 0.90, 0.0, 15.0, 0.50, 0.60, speed_cap_mps=9.8),
        Archetype("mild_fast", 1.28, 0.0, 8.0, 0.05, 0.60),
    )
}


def rotation_matrices() -> list[np.ndarray]:
    """The 24 proper signed-permutation rotations, in a fixed order.

    Index 0 is the identity: the landscape dashboard pose with forward
    motion on phone Z, side-to-side on Y, and gravity on X.
    """
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, sign) in enumerate(zip(perm, signs)):
                m[row, col] = float(sign)
            if np.linalg.det(m) > 0.5:
                mats.append(m)
    return mats


ROTATIONS = rotation_matrices()


def expected_mapping(rotation: np.ndarray) -> AxisMapping:
    """The axis mapping an ideal inference would recover for a rotation."""
    axes = "xyz"
    lon_row = int(np.flatnonzero(rotation[:, 2])[0])
    lat_row = int(np.flatnonzero(rotation[:, 1])[0])
    return AxisMapping(
        longitudinal_axis=axes[lon_row],
        longitudinal_sign=int(rotation[lon_row, 2]),
        lateral_axis=axes[lat_row],
        lateral_sign=int(rotation[lat_row, 1]),
        confidence=1.0,
    )


DEFAULT_ORIGIN = (37.76, -122.44)


def _node_latlon(i: int, j: int, grid_n: int, block_m: float, origin) -> tuple[float, float]:
    lat = origin[0] + j * lat_step_deg(block_m)
    # Column spacing is exact at each row's latitude; centering the shear
    # keeps vertical segments within a micrometer of block_m.
    dlon = lon_step_deg(block_m, lat)
    lon = origin[1] + (i - (grid_n - 1) / 2.0) * dlon
    return lat, lon


def generate_network(
    grid_n: int,
    block_m: float = 120.0,
    highway: bool = True,
    seed: int = 0,
    origin=DEFAULT_ORIGIN,
    path=None,
) -> RoadNetwork:
    """A grid_n x grid_n street grid, optionally ringed by a highway.

    Grid streets are `local` at 11.2 m/s; the ring sits two blocks outside
    the grid as `highway` at 29 m/s, reached by four `arterial` ramps. The
    layout is fully determined by the arguments (the seed is accepted for
    interface symmetry with the ride generator).
    """
    del seed  # geometry is parameter-deterministic
    if grid_n < 2:
        raise SynthError("grid_n must be >= 2")

    def node(i, j):
        return _node_latlon(i, j, grid_n, block_m, origin)

    segments = []
    for j in range(grid_n):
        for i in range(grid_n - 1):
            segments.append(
                RoadSegment(
                    f"g-h-{i:02d}-{j:02d}",
                    np.asarray([node(i, j), node(i + 1, j)]),
                    "local",
                    LOCAL_LIMIT_MPS,
                )
            )
    for j in range(grid_n - 1):
        for i in range(grid_n):
            segments.append(
                RoadSegment(
                    f"g-v-{i:02d}-{j:02d}",
                    np.asarray([node(i, j), node(i, j + 1)]),
                    "local",
                    LOCAL_LIMIT_MPS,
                )
            )

    if highway:
        # Ring two blocks outside the grid. Each side is two long multi-
        # vertex segments split at the ramp junction, so per-segment speed
        # distributions reflect open-road driving rather than the corner
        # and merge zones.
        lo, hi = -2, grid_n + 1
        mid = grid_n // 2
        sides = {
            "s": [(i, lo) for i in range(lo, hi + 1)],
            "e": [(hi, j) for j in range(lo, hi + 1)],
            "n": [(i, hi) for i in range(hi, lo - 1, -1)],
            "w": [(lo, j) for j in range(hi, lo - 1, -1)],
        }
        junctions = {"s": (mid, lo), "e": (hi, mid), "n": (mid, hi), "w": (lo, mid)}
        for side, nodes in sides.items():
            cut = nodes.index(junctions[side])
            for part, chunk in (("a", nodes[: cut + 1]), ("b", nodes[cut:])):
                segments.append(
                    RoadSegment(
                        f"hw-{side}-{part}",
                        np.asarray([node(*n) for n in chunk]),
                        "highway",
                        HIGHWAY_LIMIT_MPS,
                    )
                )
        ramps = {
            "s": ((mid, 0), (mid, lo)),
            "n": ((mid, grid_n - 1), (mid, hi)),
            "w": ((0, mid), (lo, mid)),
            "e": ((grid_n - 1, mid), (hi, mid)),
        }
        for side, (a, b) in ramps.items():
            segments.append(
                RoadSegment(
                    f"ramp-{side}",
                    np.asarray([node(*a), node(*b)]),
                    "arterial",
                    ARTERIAL_LIMIT_MPS,
                )
            )

    network = RoadNetwork(segments)
    if path is not None:
        network.to_geojson(path)
    return network


def _coord_key(lat: float, lon: float) -> tuple[int, int]:
    return (round(lat * 1e9), round(lon * 1e9))


def _build_graph(network: RoadNetwork):
    """Adjacency over segment endpoints, keyed by quantized coordinates."""
    adj: dict[tuple[int, int], list] = {}
    coords: dict[tuple[int, int], tuple[float, float]] = {}
    for seg in network.segments:
        a = _coord_key(seg.polyline[0, 0], seg.polyline[0, 1])
        b = _coord_key(seg.polyline[-1, 0], seg.polyline[-1, 1])
        coords[a] = (float(seg.polyline[0, 0]), float(seg.polyline[0, 1]))
        coords[b] = (float(seg.polyline[-1, 0]), float(seg.polyline[-1, 1]))
        adj.setdefault(a, []).append((seg.segment_id, b, False))
        adj.setdefault(b, []).append((seg.segment_id, a, True))
    for key in adj:
        adj[key].sort()
    return adj, coords


def _plan_route(network: RoadNetwork, rng, needed_m: float, start_on_highway: bool):
    """Random walk over the network graph until enough length is gathered."""
    adj, _ = _build_graph(network)
    node_keys = sorted(adj)
    if start_on_highway:
        hw = sorted(
            {
                k
                for k in node_keys
                if any(network.by_id[sid].road_class == "highway" for sid, _, _ in adj[k])
            }
        )
        node_keys = hw or node_keys
    cur = node_keys[int(rng.integers(len(node_keys)))]
    prev_sid = None
    route = []
    total = 0.0
    while total < needed_m:
        options = [e for e in adj[cur] if e[0] != prev_sid] or adj[cur]
        if prev_sid is not None and network.by_id[prev_sid].road_class == "highway":
            hw_opts = [e for e in options if network.by_id[e[0]].road_class == "highway"]
            if hw_opts and rng.random() < 0.8:
                options = hw_opts
        sid, other, reverse = options[int(rng.integers(len(options)))]
        route.append((sid, reverse))
        seg = network.by_id[sid]
        total += haversine_m(
            seg.polyline[:-1, 0], seg.polyline[:-1, 1], seg.polyline[1:, 0], seg.polyline[1:, 1]
        ).sum()
        prev_sid = sid
        cur = other
    return route


class _Path:
    """Concatenated route geometry with arc-length lookups."""

    def __init__(self, network: RoadNetwork, route):
        verts = []
        self.edge_sid = []
        for sid, reverse in route:
            pts = network.by_id[sid].polyline
            pts = pts[::-1] if reverse else pts
            if not verts:
                verts.append((float(pts[0, 0]), float(pts[0, 1])))
            for p in pts[1:]:
                verts.append((float(p[0]), float(p[1])))
                self.edge_sid.append(sid)
        self.verts = np.asarray(verts)
        d = haversine_m(
            self.verts[:-1, 0], self.verts[:-1, 1], self.verts[1:, 0], self.verts[1:, 1]
        )
        self.cum = np.concatenate(([0.0], np.cumsum(d)))
        self.headings = initial_bearing_deg(
            self.verts[:-1, 0], self.verts[:-1, 1], self.verts[1:, 0], self.verts[1:, 1]
        )
        self.length = float(self.cum[-1])
        # arc length where the segment id changes, with the turn angle there
        self.boundaries = []
        for e in range(1, len(self.edge_sid)):
            if self.edge_sid[e] != self.edge_sid[e - 1]:
                angle = float(wrap_deg(self.headings[e] - self.headings[e - 1]))
                self.boundaries.append((float(self.cum[e]), angle))

    def edge_at(self, s: float) -> int:
        e = int(np.searchsorted(self.cum, s, side="right")) - 1
        return min(max(e, 0), len(self.edge_sid) - 1)

    def latlon_at(self, s: float) -> tuple[float, float]:
        e = self.edge_at(s)
        span = self.cum[e + 1] - self.cum[e]
        f = 0.0 if span <= 0 else (s - self.cum[e]) / span
        f = min(max(f, 0.0), 1.0)
        lat = self.verts[e, 0] + f * (self.verts[e + 1, 0] - self.verts[e, 0])
        lon = self.verts[e, 1] + f * (self.verts[e + 1, 1] - self.verts[e, 1])
        return float(lat), float(lon)

    def segment_at(self, s: float) -> str:
        return self.edge_sid[self.edge_at(s)]

    def along_at(self, s: float, network: RoadNetwork) -> float:
        e = self.edge_at(s)
        sid = self.edge_sid[e]
        first = e
        while first > 0 and self.edge_sid[first - 1] == sid:
            first -= 1
        last = e
        while last + 1 < len(self.edge_sid) and self.edge_sid[last + 1] == sid:
            last += 1
        span = self.cum[last + 1] - self.cum[first]
        if span <= 0:
            return 0.0
        frac = (s - self.cum[first]) / span
        return min(max(frac, 0.0), 1.0)

    def heading_at(self, s: float) -> float:
        e = self.edge_at(s)
        h = float(self.headings[e])
        # blend across corners so the heading (and thus yaw) is finite
        for b, angle in self.boundaries:
            if abs(s - b) <= TURN_ZONE_M / 2.0:
                frac = (s - (b - TURN_ZONE_M / 2.0)) / TURN_ZONE_M
                e_prev = self.edge_at(b - 1e-6)
                h_prev = float(self.headings[e_prev])
                return h_prev + frac * angle
        return h


@dataclass
class PlantedEvent:
    kind: str  # "hard_brake" or "hard_accel"
    t_start: float
    t_end: float
    accel_mps2: float


@dataclass
class GroundTruth:
    ride_id: str
    driver_id: str
    archetype: str
    rotation_index: int
    rotation: list
    gps_sigma: float | None
    route_segments: list[str]
    t: np.ndarray
    speed: np.ndarray
    lon_accel: np.ndarray
    lat_accel: np.ndarray
    heading: np.ndarray
    segment_id: list[str]
    along: np.ndarray
    events: list[PlantedEvent] = field(default_factory=list)

    def write_jsonl(self, path) -> None:
        lines = [
            json.dumps(
                {
                    "kind": "meta",
                    "ride_id": self.ride_id,
                    "driver_id": self.driver_id,
                    "archetype": self.archetype,
                    "rotation_index": self.rotation_index,
                    "rotation": self.rotation,
                    "gps_sigma": self.gps_sigma,
                }
            ),
            json.dumps({"kind": "route", "segments": self.route_segments}),
        ]
        for i in range(len(self.t)):
            lines.append(
                json.dumps(
                    {
                        "kind": "state",
                        "t": float(self.t[i]),
                        "speed": float(self.speed[i]),
                        "lon_accel": float(self.lon_accel[i]),
                        "lat_accel": float(self.lat_accel[i]),
                        "heading": float(self.heading[i]),
                        "segment_id": self.segment_id[i],
                        "along": float(self.along[i]),
                    }
                )
            )
        for ev in self.events:
            lines.append(
                json.dumps(
                    {
                        "kind": "event",
                        "event": ev.kind,
                        "t_start": ev.t_start,
                        "t_end": ev.t_end,
                        "accel_mps2": ev.accel_mps2,
                    }
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "GroundTruth":
        meta = route = None
        states = []
        events = []
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            if rec["kind"] == "meta":
                meta = rec
            elif rec["kind"] == "route":
                route = rec["segments"]
            elif rec["kind"] == "state":
                states.append(rec)
            elif rec["kind"] == "event":
                events.append(
                    PlantedEvent(rec["event"], rec["t_start"], rec["t_end"], rec["accel_mps2"])
                )
        return cls(
            ride_id=meta["ride_id"],
            driver_id=meta["driver_id"],
            archetype=meta["archetype"],
            rotation_index=meta["rotation_index"],
            rotation=meta["rotation"],
            gps_sigma=meta["gps_sigma"],
            route_segments=route,
            t=np.asarray([s["t"] for s in states]),
            speed=np.asarray([s["speed"] for s in states]),
            lon_accel=np.asarray([s["lon_accel"] for s in states]),
            lat_accel=np.asarray([s["lat_accel"] for s in states]),
            heading=np.asarray([s["heading"] for s in states]),
            segment_id=[s["segment_id"] for s in states],
            along=np.asarray([s["along"] for s in states]),
            events=events,
        )


def _cruise(network: RoadNetwork, sid: str, archetype: Archetype) -> float:
    limit = network.by_id[sid].speed_limit_mps or LOCAL_LIMIT_MPS
    v = limit * archetype.target_speed_ratio
    if archetype.speed_cap_mps is not None:
        v = min(v, archetype.speed_cap_mps)
    return max(v, 2.0)


def _speed_envelope(path: _Path, network, archetype, rng, start_at_cruise: bool):
    """Per-meter speed profile along the route, with corner targets embedded.

    Returns (env, cruise, corners): env carries the accel/decel ramps the
    vehicle chases; cruise is the raw per-meter ceiling, used to judge
    headroom for planted hard-acceleration events; corners lists the arc
    positions of real turns.
    """
    n = int(math.ceil(path.length)) + 1
    cruise = np.empty(n)
    for i in range(n):
        cruise[i] = _cruise(network, path.segment_at(min(float(i), path.length)), archetype)
    env = cruise.copy()
    corners = []
    half_zone = int(TURN_ZONE_M / 2.0)
    for b, angle in path.boundaries:
        ib = min(int(round(b)), n - 1)
        if abs(angle) > CORNER_ANGLE_DEG:
            corners.append(b)
            sharp = rng.random() < archetype.sharp_turn_prob
            v_turn = V_TURN_SHARP if sharp else V_TURN_NORMAL
            # hold the corner speed across the whole heading-blend zone so
            # lateral acceleration is v_turn^2 * dheading/ds throughout
            lo = max(ib - half_zone, 0)
            hi = min(ib + half_zone, n - 1)
            env[lo : hi + 1] = np.minimum(env[lo : hi + 1], v_turn)
        # straight-through keeps min of adjoining cruises, already in env
    if not start_at_cruise:
        env[0] = 0.0
    for i in range(n - 2, -1, -1):
        env[i] = min(env[i], math.sqrt(env[i + 1] ** 2 + 2.0 * BASE_DECEL_MPS2))
    for i in range(1, n):
        env[i] = min(env[i], math.sqrt(env[i - 1] ** 2 + 2.0 * BASE_ACCEL_MPS2))
    return env, cruise, np.asarray(corners)


def generate_ride(
    network: RoadNetwork,
    archetype: Archetype,
    duration_s: float,
    seed,
    gps_sigma: float | None | str = "draw",
    rotation_index: int = 0,
    start_time: datetime | None = None,
    start_on_highway: bool = False,
    start_at_cruise: bool = False,
    ride_id: str = "ride-000",
    driver_id: str = "drv-000",
    out_dir=None,
) -> tuple[Ride, GroundTruth]:
    """Simulate one ride and optionally write it in the ingest layout.

    `gps_sigma="draw"` samples a per-ride sigma uniformly from the
    realistic [2, 8] m band; pass a number to pin it or None for noise-free
    positions. `rotation_index` selects one of the 24 phone orientations
    (0 = landscape dashboard pose).
    """
    if duration_s < 60:
        raise SynthError("duration_s must be >= 60")
    rng = np.random.default_rng(seed)
    if start_time is None:
        start_time = datetime.fromisoformat("2016-06-14T08:00:00-07:00")

    max_cruise = max(_cruise(network, s.segment_id, archetype) for s in network.segments)
    route = _plan_route(network, rng, duration_s * max_cruise * 1.3 + 500.0, start_on_highway)
    path = _Path(network, route)
    env, cruise, corners = _speed_envelope(
        path, network, archetype, rng, start_at_cruise or start_on_highway
    )

    n10 = int(round(duration_s / DT))
    u_brake = rng.random(n10)
    u_accel = rng.random(n10)

    s = 0.0
    v = env[0] if (start_at_cruise or start_on_highway) else 0.0
    s_arr = np.empty(n10)
    v_arr = np.empty(n10)
    a_arr = np.empty(n10)
    events: list[PlantedEvent] = []
    event_until = -1.0
    event_accel = 0.0
    cooldown_until = 0.0
    pending_brake = 0
    pending_accel = 0

    brake_rate = archetype.hard_brake_per_100km
    accel_rate = archetype.hard_accel_per_100km

    for k in range(n10):
        t = k * DT
        s_arr[k] = s
        v_arr[k] = v
        # Chase the ceiling just past the distance this step will cover;
        # decel ramps for corners are already embedded in the envelope.
        env_here = env[min(int(s + v * DT + 1.0), len(env) - 1)]

        cruise_here = cruise[min(int(s), len(cruise) - 1)]
        if t < event_until:
            a = event_accel
            if event_accel < 0 and v + a * DT < 0.3:
                a = -(v - 0.3) / DT
            if event_accel > 0 and v > cruise_here - 0.3:
                a = 0.0
        else:
            a = (env_here - v) / DT
            a = min(max(a, -BASE_DECEL_MPS2), BASE_ACCEL_MPS2)
            # Events arrive as a per-meter hazard, so realized counts track
            # rate x distance; a firing that lands at an infeasible moment
            # stays pending until the vehicle can express it.
            km_step = v * DT / 1000.0
            if u_brake[k] < brake_rate * km_step / 100.0:
                pending_brake += 1
            if u_accel[k] < accel_rate * km_step / 100.0:
                pending_accel += 1
            if t >= cooldown_until:
                next_corner = (
                    corners[np.searchsorted(corners, s)] - s
                    if np.searchsorted(corners, s) < len(corners)
                    else math.inf
                )
                if pending_brake and v >= 6.5:
                    pending_brake -= 1
                    event_until = t + EVENT_LEN_S
                    event_accel = EVENT_BRAKE_MPS2
                    cooldown_until = event_until + EVENT_COOLDOWN_S
                    events.append(PlantedEvent("hard_brake", t, event_until, EVENT_BRAKE_MPS2))
                    a = event_accel
                elif (
                    pending_accel
                    and cruise_here - v >= 4.0
                    and v >= 1.0
                    and next_corner >= 60.0
                ):
                    pending_accel -= 1
                    event_until = t + EVENT_LEN_S
                    event_accel = EVENT_ACCEL_MPS2
                    cooldown_until = event_until + EVENT_COOLDOWN_S
                    events.append(PlantedEvent("hard_accel", t, event_until, EVENT_ACCEL_MPS2))
                    a = event_accel

        a_arr[k] = a
        v = max(v + a * DT, 0.0)
        s = min(s + v * DT, path.length - 1e-6)

    t10 = np.arange(n10) / 10.0
    heading10 = np.asarray([path.heading_at(si) for si in s_arr])
    dh = wrap_deg(np.diff(heading10))
    yaw10 = np.concatenate((-np.radians(dh) / DT, [0.0]))
    lat10 = v_arr * yaw10
    latlon10 = np.asarray([path.latlon_at(si) for si in s_arr])

    if gps_sigma == "draw":
        gps_sigma = GpsErrorModel(float(rng.uniform(2.0, 8.0))).sigma
    rotation = ROTATIONS[rotation_index]

    ride = emit_ride(
        rng,
        ride_id,
        driver_id,
        start_time,
        t10,
        v_arr,
        a_arr,
        lat10,
        yaw10,
        heading10,
        latlon10,
        rotation,
        archetype.accel_noise_sigma,
        gps_sigma,
    )

    sec_idx = np.arange(0, n10, 10)
    truth = GroundTruth(
        ride_id=ride_id,
        driver_id=driver_id,
        archetype=archetype.name,
        rotation_index=rotation_index,
        rotation=[[float(x) for x in row] for row in rotation],
        gps_sigma=gps_sigma,
        route_segments=[sid for sid, _ in route],
        t=t10[sec_idx],
        speed=v_arr[sec_idx],
        lon_accel=a_arr[sec_idx],
        lat_accel=lat10[sec_idx],
        heading=heading10[sec_idx],
        segment_id=[path.segment_at(si) for si in s_arr[sec_idx]],
        along=np.asarray([path.along_at(si, network) for si in s_arr[sec_idx]]),
        events=events,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        serialize_ride(ride, out_dir)
        truth.write_jsonl(out_dir / "ground_truth.jsonl")
    return ride, truth


def emit_ride(
    rng,
    ride_id,
    driver_id,
    start_time,
    t10,
    v10,
    lon10,
    lat10,
    yaw10,
    heading10,
    latlon10,
    rotation,
    accel_noise_mps2,
    gps_sigma,
) -> Ride:
    """Project vehicle-frame truth into phone-frame sensor streams.

    In the identity pose, phone x carries the vertical (gravity reaction of
    +1 G at rest), y the lateral, z the longitudinal axis.
    """
    n10 = len(t10)
    identity = np.vstack(
        (
            np.ones(n10),
            lat10 / GRAVITY_MPS2,
            lon10 / GRAVITY_MPS2,
        )
    )
    accel = rotation @ identity + rng.normal(0.0, accel_noise_mps2 / GRAVITY_MPS2, (3, n10))
    gyro = rotation @ np.vstack((yaw10, np.zeros(n10), np.zeros(n10)))
    gyro_noisy = gyro + rng.normal(0.0, GYRO_NOISE_RADS, (3, n10))
    motion = gyro + rng.normal(0.0, MOTION_NOISE_RADS, (3, n10))

    sec = np.arange(0, n10, 10)
    n1 = len(sec)
    lat_gps = latlon10[sec, 0].copy()
    lon_gps = latlon10[sec, 1].copy()
    if gps_sigma is None:
        # noise-free mode: the whole GPS channel reports truth
        speed_gps = v10[sec].copy()
        heading_gps = heading10[sec] % 360.0
    else:
        if gps_sigma > 0:
            north = rng.normal(0.0, gps_sigma, n1)
            east = rng.normal(0.0, gps_sigma, n1)
            for i in range(n1):
                lat_gps[i], lon_gps[i] = offset_latlon(
                    lat_gps[i], lon_gps[i], north[i], east[i]
                )
        speed_gps = np.maximum(v10[sec] + rng.normal(0.0, GPS_SPEED_NOISE_MPS, n1), 0.0)
        heading_gps = (heading10[sec] + rng.normal(0.0, GPS_HEADING_NOISE_DEG, n1)) % 360.0

    theta = np.radians(heading10[sec])
    f_n, f_e, f_d = MAG_FIELD_NED_UT
    mag_vehicle = np.vstack(
        (
            -f_d * np.ones(n1),  # up
            f_n * np.sin(theta) - f_e * np.cos(theta),  # left
            f_n * np.cos(theta) + f_e * np.sin(theta),  # forward
        )
    )
    mag = rotation @ mag_vehicle + rng.normal(0.0, MAG_NOISE_UT, (3, n1))

    return Ride(
        ride_id=ride_id,
        driver_id=driver_id,
        start_time=start_time,
        gps=GpsStream(
            t=t10[sec].copy(),
            lat=lat_gps,
            lon=lon_gps,
            speed=speed_gps,
            heading=heading_gps,
        ),
        accel=AxisStream(ACCEL, t10.copy(), accel[0], accel[1], accel[2]),
        gyro=AxisStream(GYRO, t10.copy(), gyro_noisy[0], gyro_noisy[1], gyro_noisy[2]),
        mag=AxisStream(MAG, t10[sec].copy(), mag[0], mag[1], mag[2], nominal_hz=1),
        motion=AxisStream(MOTION, t10.copy(), motion[0], motion[1], motion[2]),
    )


@dataclass
class FleetSummary:
    corpus_dir: Path
    labels: dict[str, str]  # driver_id -> archetype name
    ride_dirs: list[Path]
    truths: list[GroundTruth]


def generate_fleet(
    network: RoadNetwork,
    archetype_mix,
    seed: int,
    out_dir,
    duration_s: float = 360.0,
    start_time: datetime | None = None,
    rotate_fraction: float = 0.0,
    highway_fraction: float = 0.25,
) -> FleetSummary:
    """Write a corpus of ride directories plus labels.csv.

    `archetype_mix` is a list of (archetype, n_drivers, rides_each); the
    archetype may be given by name. Each ride runs on an independent
    substream keyed by (driver index, ride index), so the corpus is
    byte-identical for a fixed seed regardless of generation order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if start_time is None:
        start_time = datetime.fromisoformat("2016-06-14T08:00:00-07:00")

    labels: dict[str, str] = {}
    ride_dirs: list[Path] = []
    truths: list[GroundTruth] = []
    driver_idx = 0
    for entry in archetype_mix:
        archetype, n_drivers, rides_each = entry
        if isinstance(archetype, str):
            archetype = ARCHETYPES[archetype]
        for _ in range(n_drivers):
            driver_id = f"drv-{driver_idx:03d}"
            labels[driver_id] = archetype.name
            for ride_idx in range(rides_each):
                ss = np.random.SeedSequence(entropy=seed, spawn_key=(driver_idx, ride_idx))
                setup = np.random.default_rng(ss.spawn(1)[0])
                jitter = float(setup.uniform(0.0, 120.0))
                # deterministic highway exposure so drivers of one archetype
                # see identical route mixes (no extra between-driver variance)
                on_highway = int((ride_idx + 1) * highway_fraction) > int(
                    ride_idx * highway_fraction
                )
                rotation_index = (
                    int(setup.integers(len(ROTATIONS)))
                    if setup.random() < rotate_fraction
                    else 0
                )
                ride_id = f"{driver_id}-r{ride_idx:02d}"
                ride_dir = out_dir / ride_id
                _, truth = generate_ride(
                    network,
                    archetype,
                    duration_s,
                    ss,
                    rotation_index=rotation_index,
                    start_time=start_time + timedelta(seconds=jitter),
                    start_on_highway=on_highway,
                    ride_id=ride_id,
                    driver_id=driver_id,
                    out_dir=ride_dir,
                )
                ride_dirs.append(ride_dir)
                truths.append(truth)
            driver_idx += 1

    lines = ["driver_id,archetype"]
    for driver_id in sorted(labels):
        lines.append(f"{driver_id},{labels[driver_id]}")
    (out_dir / "labels.csv").write_text("\n".join(lines) + "\n")
    return FleetSummary(corpus_dir=out_dir, labels=labels, ride_dirs=ride_dirs, truths=truths)
