"""Pipeline stages with on-disk handoff and content-hash manifests.

Each stage reads its predecessors' files, writes its own artifacts under
the output directory, and records a manifest (parameters, input hashes,
output hashes, tool version). Re-running a stage whose manifest still
matches is a no-op unless forced, so changing one input recomputes exactly
the stages downstream of it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
from dataclasses import dataclass
from datetime import datetime
from functools import partial
from pathlib import Path

import numpy as np

from . import RidekitError, __version__
from . import cluster as cluster_mod
from . import features as features_mod
from . import norms as norms_mod
from .config import PipelineConfig, parse_mix
from .ingest import find_ride_dirs, parse_ride, validate_ride
from .mapmatch import (
    Candidate,
    FixtureMatcher,
    MatchCache,
    MatchedKinematics,
    MatchedPoint,
    MatcherParams,
    RemoteUnavailable,
    RoadNetwork,
    attach_segments,
    match_ride,
)
from .signal import (
    VehicleKinematics,
    infer_axis_mapping,
    l1_trend_filter,
    moving_average,
    to_vehicle_frame,
    tv_denoise,
)
from .synth import ARCHETYPES, generate_fleet, generate_network

STAGE_ORDER = (
    "synth",
    "ingest",
    "match",
    "preprocess",
    "norms",
    "features",
    "cluster",
    "flag",
    "report",
)


class MissingDependency(RidekitError):
    def __init__(self, artifact: str):
        super().__init__(f"missing required artifact: {artifact}")
        self.artifact = artifact


@dataclass
class StageResult:
    stage: str
    status: str  # "ran" | "up-to-date"
    outputs: list[str]


class Artifacts:
    """Canonical artifact locations for one pipeline run."""

    def __init__(self, cfg: PipelineConfig):
        self.base = Path(cfg.output_dir)
        self.corpus = Path(cfg.corpus_dir)
        self.network = Path(cfg.network_file)
        self.cache = Path(cfg.cache_file)
        self.manifests = self.base / "manifests"
        self.ride_index = self.base / "ride_index.csv"
        self.matches_dir = self.base / "matches"
        self.turns_dir = self.base / "turns"
        self.kinematics_dir = self.base / "kinematics"
        self.axis_csv = self.base / "axis_mappings.csv"
        self.norms_csv = self.base / "norms.csv"
        self.features_csv = self.base / "features.csv"
        self.skips_csv = self.base / "skips.csv"
        self.model_json = self.base / "model.json"
        self.flags_csv = self.base / "flags.csv"
        self.reports = self.base / "reports"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _hash_files(paths, root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(paths):
        p = Path(p)
        key = str(p.relative_to(root)) if root in p.parents or p == root else str(p)
        out[key] = _sha256(p)
    return out


def _corpus_files(corpus: Path, names=None) -> list[Path]:
    files = []
    for ride_dir in find_ride_dirs(corpus):
        for f in sorted(ride_dir.iterdir()):
            if f.name == "ground_truth.jsonl":
                continue
            if names is None or f.name in names:
                files.append(f)
    return files


def _manifest_path(arts: Artifacts, stage: str) -> Path:
    return arts.manifests / f"{stage}.json"


def _up_to_date(arts: Artifacts, stage: str, params: dict, inputs: dict) -> bool:
    path = _manifest_path(arts, stage)
    if not path.exists():
        return False
    try:
        manifest = json.loads(path.read_text())
    except ValueError:
        return False
    if manifest.get("version") != __version__:
        return False
    if manifest.get("params") != params:
        return False
    if manifest.get("inputs") != inputs:
        return False
    for rel, digest in manifest.get("outputs", {}).items():
        p = arts.base / rel
        if not p.exists() or _sha256(p) != digest:
            return False
    return True


def _write_manifest(arts: Artifacts, stage: str, params: dict, inputs: dict, outputs) -> None:
    arts.manifests.mkdir(parents=True, exist_ok=True)
    payload = {
        "stage": stage,
        "version": __version__,
        "params": params,
        "inputs": inputs,
        "outputs": {
            str(Path(p).relative_to(arts.base)): _sha256(Path(p)) for p in sorted(outputs)
        },
    }
    _manifest_path(arts, stage).write_text(json.dumps(payload, sort_keys=True, indent=2))


def _require(path: Path, name: str) -> Path:
    if not path.exists():
        raise MissingDependency(name)
    return path


def _matcher_params(cfg: PipelineConfig) -> MatcherParams:
    return MatcherParams(
        candidate_radius_m=cfg.candidate_radius_m,
        sigma_m=cfg.sigma_m,
        segment_switch_cost=cfg.kappa,
        gap_cost_per_m=cfg.rho_per_m,
    )


def _smoother(cfg: PipelineConfig):
    if cfg.filter_kind == "l1_trend":
        return partial(l1_trend_filter, lam=cfg.l1_lambda)
    if cfg.filter_kind == "tv":
        return partial(tv_denoise, lam=cfg.tv_lambda)
    return partial(moving_average, window=cfg.ma_window_s)


# ---------------------------------------------------------------------------
# per-ride work, shaped so it can run in worker processes (fork start method)

_CTX: dict = {}


def _load_usable_ride_dirs(arts: Artifacts) -> list[Path]:
    _require(arts.ride_index, "ride_index.csv")
    dirs = []
    with arts.ride_index.open(newline="") as fh:
        for row in csv.DictReader(fh):
            if row["usable"] == "1":
                dirs.append(arts.corpus / row["ride_dir"])
    return dirs


class _SnapshotCache:
    """Read-only view of a cache snapshot plus per-ride local additions.

    Rides never see each other's in-run additions, so match results do not
    depend on ride scheduling or the worker count.
    """

    def __init__(self, store: dict):
        self._base = store
        self.local: dict = {}

    def lookup(self, lat: float, lon: float):
        key = MatchCache.key_for(lat, lon)
        hit = self.local.get(key)
        return hit if hit is not None else self._base.get(key)

    def add(self, lat: float, lon: float, cand) -> None:
        key = MatchCache.key_for(lat, lon)
        if key not in self.local and key not in self._base:
            self.local[key] = cand


def _match_one(ride_dir: Path):
    network = _CTX["network"]
    params = _CTX["params"]
    cfg = _CTX["cfg"]
    ride = parse_ride(ride_dir)
    cache = _SnapshotCache(_CTX["cache_store"])
    matcher = None
    if cfg.matcher_kind == "fixture":
        try:
            matcher = FixtureMatcher(cfg.fixture_file)
            traj = match_ride(ride, network, cache=cache, params=params, matcher=matcher)
        except RemoteUnavailable:
            if not cfg.fallback_offline:
                raise
            traj = match_ride(ride, network, cache=cache, params=params)
    else:
        traj = match_ride(ride, network, cache=cache, params=params)

    rows = []
    for p, t, lat, lon in zip(
        traj.points, ride.gps.t, ride.gps.lat, ride.gps.lon
    ):
        if p is None:
            rows.append((repr(float(t)), repr(float(lat)), repr(float(lon)), "", "", "", "", ""))
        else:
            rows.append(
                (
                    repr(p.t), repr(p.lat), repr(p.lon), p.segment_id,
                    repr(p.snap_lat), repr(p.snap_lon), repr(p.along),
                    repr(p.snap_distance_m),
                )
            )
    turn_rows = [(repr(float(a)), repr(float(b))) for a, b in traj.turn_windows]
    local = sorted(
        (key, c.segment_id, c.snap_lat, c.snap_lon, c.along) for key, c in cache.local.items()
    )
    return ride.ride_id, rows, turn_rows, local


def _read_matches(arts: Artifacts, ride_id: str):
    path = _require(arts.matches_dir / f"{ride_id}.csv", f"matches/{ride_id}.csv")
    points = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["segment_id"]:
                points.append(None)
                continue
            points.append(
                MatchedPoint(
                    float(row["lat"]), float(row["lon"]), float(row["t"]),
                    row["segment_id"], float(row["snap_lat"]), float(row["snap_lon"]),
                    float(row["along"]), float(row["snap_distance_m"]),
                )
            )
    turns_path = _require(arts.turns_dir / f"{ride_id}.csv", f"turns/{ride_id}.csv")
    windows = []
    with turns_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            windows.append((float(row["t_start"]), float(row["t_end"])))
    return points, windows


def _preprocess_one(ride_dir: Path):
    arts = _CTX["arts"]
    cfg = _CTX["cfg"]
    ride = parse_ride(ride_dir)
    points, windows = _read_matches(arts, ride.ride_id)
    mapping = infer_axis_mapping(ride, windows)
    kin = to_vehicle_frame(ride, mapping, smoother=_smoother(cfg))

    from .mapmatch import MatchedTrajectory

    traj = attach_segments(kin, MatchedTrajectory(ride.ride_id, points, windows))
    rows = []
    for i in range(len(kin.t)):
        rows.append(
            (
                repr(float(kin.t[i])), repr(float(kin.speed[i])),
                repr(float(kin.lon_accel[i])), repr(float(kin.lat_accel[i])),
                repr(float(kin.yaw_rate[i])), str(int(kin.gap[i])),
                traj.segment_ids[i] or "",
            )
        )
    meta = (
        f"# ride_id={ride.ride_id} driver_id={ride.driver_id} "
        f"start_time={ride.start_time.isoformat()}"
    )
    mapping_row = (
        ride.ride_id,
        mapping.longitudinal_axis, str(mapping.longitudinal_sign),
        mapping.lateral_axis, str(mapping.lateral_sign),
        repr(mapping.confidence),
    )
    return ride.ride_id, meta, rows, mapping_row


def _run_per_ride(work, ride_dirs: list[Path], jobs: int, ctx: dict):
    """Run a per-ride worker over all rides, optionally in processes.

    Results are collected per ride and handled in sorted order by the
    caller, so output bytes do not depend on the worker count.
    """
    global _CTX
    _CTX = ctx
    if jobs <= 1 or len(ride_dirs) <= 1:
        return [work(d) for d in ride_dirs]
    with multiprocessing.get_context("fork").Pool(processes=jobs) as pool:
        return pool.map(work, ride_dirs)


def load_kinematics(path: Path) -> MatchedKinematics:
    """Read one preprocess-stage kinematics CSV back into memory."""
    lines = path.read_text().splitlines()
    meta = dict(part.split("=", 1) for part in lines[0][2:].split(" "))
    reader = csv.DictReader(lines[1:])
    t, speed, lon, lat, yaw, gap, segs = [], [], [], [], [], [], []
    for row in reader:
        t.append(float(row["t"]))
        speed.append(float(row["speed"]))
        lon.append(float(row["lon_accel"]))
        lat.append(float(row["lat_accel"]))
        yaw.append(float(row["yaw_rate"]))
        gap.append(bool(int(row["gap"])))
        segs.append(row["segment_id"] or None)
    kin = VehicleKinematics(
        ride_id=meta["ride_id"],
        driver_id=meta["driver_id"],
        start_time=datetime.fromisoformat(meta["start_time"]),
        t=np.asarray(t),
        speed=np.asarray(speed),
        lon_accel=np.asarray(lon),
        lat_accel=np.asarray(lat),
        yaw_rate=np.asarray(yaw),
        gap=np.asarray(gap, dtype=bool),
    )
    return MatchedKinematics(kin=kin, segment_ids=segs)


def _load_all_kinematics(arts: Artifacts) -> list[MatchedKinematics]:
    _require(arts.kinematics_dir, "kinematics/")
    return [load_kinematics(p) for p in sorted(arts.kinematics_dir.glob("*.csv"))]


# ---------------------------------------------------------------------------
# stages


def _stage_synth(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    params = {
        "grid_n": cfg.synth_grid_n,
        "block_m": cfg.synth_block_m,
        "highway": cfg.synth_highway,
        "mix": cfg.synth_mix,
        "duration_s": cfg.synth_duration_s,
        "rotate_fraction": cfg.synth_rotate_fraction,
        "highway_fraction": cfg.synth_highway_fraction,
        "seed": cfg.seed,
    }
    if not force and _up_to_date(arts, "synth", params, {}):
        return StageResult("synth", "up-to-date", [])
    arts.network.parent.mkdir(parents=True, exist_ok=True)
    network = generate_network(
        cfg.synth_grid_n, cfg.synth_block_m, cfg.synth_highway, cfg.seed, path=arts.network
    )
    mix = [(ARCHETYPES[name], n, r) for name, n, r in parse_mix(cfg.synth_mix)]
    summary = generate_fleet(
        network,
        mix,
        cfg.seed,
        arts.corpus,
        duration_s=cfg.synth_duration_s,
        rotate_fraction=cfg.synth_rotate_fraction,
        highway_fraction=cfg.synth_highway_fraction,
    )
    outputs = [arts.network, arts.corpus / "labels.csv"]
    _write_manifest(arts, "synth", params, {}, outputs)
    return StageResult("synth", "ran", [str(p) for p in outputs] + [str(summary.corpus_dir)])


def _stage_ingest(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    _require(arts.corpus, str(arts.corpus))
    files = _corpus_files(arts.corpus)
    if not files:
        raise MissingDependency(f"ride directories under {arts.corpus}")
    inputs = _hash_files(files, arts.corpus)
    params: dict = {}
    if not force and _up_to_date(arts, "ingest", params, inputs):
        return StageResult("ingest", "up-to-date", [str(arts.ride_index)])
    rows = []
    for ride_dir in find_ride_dirs(arts.corpus):
        ride = parse_ride(ride_dir)
        report = validate_ride(ride)
        gps = report.channels["gps"]
        accel = report.channels["accel"]
        rows.append(
            (
                ride.ride_id, ride.driver_id, ride_dir.name,
                str(int(report.usable)),
                repr(gps.duration_s), repr(gps.observed_hz), str(gps.gap_count),
                repr(accel.observed_hz), str(accel.gap_count),
            )
        )
    arts.base.mkdir(parents=True, exist_ok=True)
    with arts.ride_index.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "ride_id", "driver_id", "ride_dir", "usable",
                "gps_duration_s", "gps_hz", "gps_gaps", "accel_hz", "accel_gaps",
            ]
        )
        writer.writerows(sorted(rows))
    _write_manifest(arts, "ingest", params, inputs, [arts.ride_index])
    return StageResult("ingest", "ran", [str(arts.ride_index)])


def _stage_match(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    _require(arts.network, str(arts.network))
    ride_dirs = _load_usable_ride_dirs(arts)
    inputs = _hash_files(
        _corpus_files(arts.corpus, names={"gps.csv", "ride.meta"}), arts.corpus
    )
    inputs[str(arts.network)] = _sha256(arts.network)
    if cfg.matcher_kind == "fixture" and Path(cfg.fixture_file).exists():
        inputs[cfg.fixture_file] = _sha256(Path(cfg.fixture_file))
    params = {
        "matcher_kind": cfg.matcher_kind,
        "fixture_file": cfg.fixture_file,
        "fallback_offline": cfg.fallback_offline,
        "candidate_radius_m": cfg.candidate_radius_m,
        "sigma_m": cfg.sigma_m,
        "kappa": cfg.kappa,
        "rho_per_m": cfg.rho_per_m,
    }
    if not force and _up_to_date(arts, "match", params, inputs):
        return StageResult("match", "up-to-date", [str(arts.matches_dir)])

    network = RoadNetwork.from_geojson(arts.network)
    cache = MatchCache(arts.cache)
    ctx = {
        "network": network,
        "params": _matcher_params(cfg),
        "cfg": cfg,
        "cache_store": dict(cache._store),
    }
    results = _run_per_ride(_match_one, sorted(ride_dirs), cfg.jobs, ctx)
    arts.matches_dir.mkdir(parents=True, exist_ok=True)
    arts.turns_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for ride_id, rows, turn_rows, local in sorted(results):
        mpath = arts.matches_dir / f"{ride_id}.csv"
        with mpath.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "lat", "lon", "segment_id", "snap_lat", "snap_lon", "along",
                 "snap_distance_m"]
            )
            writer.writerows(rows)
        tpath = arts.turns_dir / f"{ride_id}.csv"
        with tpath.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_start", "t_end"])
            writer.writerows(turn_rows)
        outputs += [mpath, tpath]
        for key, sid, slat, slon, along in local:
            if key not in cache._store:
                cache._store[key] = Candidate(sid, slat, slon, along, 0.0)
                cache._new.append((key, cache._store[key]))
    cache.flush()
    _write_manifest(arts, "match", params, inputs, outputs)
    return StageResult("match", "ran", [str(arts.matches_dir), str(arts.turns_dir)])


def _stage_preprocess(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    ride_dirs = _load_usable_ride_dirs(arts)
    _require(arts.matches_dir, "matches/")
    _require(arts.turns_dir, "turns/")
    inputs = _hash_files(_corpus_files(arts.corpus), arts.corpus)
    inputs.update(_hash_files(arts.matches_dir.glob("*.csv"), arts.base))
    inputs.update(_hash_files(arts.turns_dir.glob("*.csv"), arts.base))
    params = {
        "filter_kind": cfg.filter_kind,
        "ma_window_s": cfg.ma_window_s,
        "l1_lambda": cfg.l1_lambda,
        "tv_lambda": cfg.tv_lambda,
    }
    if not force and _up_to_date(arts, "preprocess", params, inputs):
        return StageResult("preprocess", "up-to-date", [str(arts.kinematics_dir)])

    ctx = {"arts": arts, "cfg": cfg}
    results = _run_per_ride(_preprocess_one, sorted(ride_dirs), cfg.jobs, ctx)
    arts.kinematics_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    mapping_rows = []
    for ride_id, meta, rows, mapping_row in sorted(results):
        kpath = arts.kinematics_dir / f"{ride_id}.csv"
        header = "t,speed,lon_accel,lat_accel,yaw_rate,gap,segment_id"
        body = "\n".join(",".join(r) for r in rows)
        kpath.write_text(f"{meta}\n{header}\n{body}\n")
        outputs.append(kpath)
        mapping_rows.append(mapping_row)
    with arts.axis_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["ride_id", "lon_axis", "lon_sign", "lat_axis", "lat_sign", "confidence"]
        )
        writer.writerows(mapping_rows)
    outputs.append(arts.axis_csv)
    _write_manifest(arts, "preprocess", params, inputs, outputs)
    return StageResult("preprocess", "ran", [str(arts.kinematics_dir), str(arts.axis_csv)])


def _kin_inputs(arts: Artifacts) -> dict:
    _require(arts.kinematics_dir, "kinematics/")
    return _hash_files(arts.kinematics_dir.glob("*.csv"), arts.base)


def _stage_norms(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    inputs = _kin_inputs(arts)
    params = {"min_trips": cfg.min_trips, "day_mode": cfg.day_mode}
    if not force and _up_to_date(arts, "norms", params, inputs):
        return StageResult("norms", "up-to-date", [str(arts.norms_csv)])
    trajs = _load_all_kinematics(arts)
    table = norms_mod.build_norms(trajs, min_trips=cfg.min_trips, day_mode=cfg.day_mode)
    table.to_csv(arts.norms_csv)
    _write_manifest(arts, "norms", params, inputs, [arts.norms_csv])
    return StageResult("norms", "ran", [str(arts.norms_csv)])


def _stage_features(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    inputs = _kin_inputs(arts)
    _require(arts.norms_csv, "norms.csv")
    inputs[str(arts.norms_csv.name)] = _sha256(arts.norms_csv)
    params = {
        "min_km": cfg.min_km,
        "hard_accel_mps2": cfg.hard_accel_mps2,
        "hard_brake_mps2": cfg.hard_brake_mps2,
        "sharp_turn_mps2": cfg.sharp_turn_mps2,
    }
    if not force and _up_to_date(arts, "features", params, inputs):
        return StageResult("features", "up-to-date", [str(arts.features_csv)])
    trajs = _load_all_kinematics(arts)
    table = norms_mod.NormsTable.from_csv(arts.norms_csv, cfg.min_trips, cfg.day_mode)
    thresholds = features_mod.EventThresholds(
        hard_accel_mps2=cfg.hard_accel_mps2,
        hard_brake_mps2=cfg.hard_brake_mps2,
        sharp_turn_mps2=cfg.sharp_turn_mps2,
    )
    feats, skips = features_mod.extract_driver_features(
        trajs, table, min_km=cfg.min_km, thresholds=thresholds
    )
    features_mod.write_features_csv(feats, arts.features_csv)
    features_mod.write_skips_csv(skips, arts.skips_csv)
    _write_manifest(arts, "features", params, inputs, [arts.features_csv, arts.skips_csv])
    return StageResult("features", "ran", [str(arts.features_csv), str(arts.skips_csv)])


def _stage_cluster(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    _require(arts.features_csv, "features.csv")
    inputs = {arts.features_csv.name: _sha256(arts.features_csv)}
    params = {
        "k_min": cfg.k_min,
        "k_max": cfg.k_max,
        "restarts": cfg.restarts,
        "seed": cfg.seed,
        "manual_k": cfg.manual_k,
    }
    if not force and _up_to_date(arts, "cluster", params, inputs):
        return StageResult("cluster", "up-to-date", [str(arts.model_json)])
    feats = features_mod.read_features_csv(arts.features_csv)
    matrix = features_mod.standardize(feats)
    k_max = min(cfg.k_max, len(matrix.driver_ids))
    curve = cluster_mod.wss_curve(
        matrix.X, range(cfg.k_min, k_max + 1), restarts=cfg.restarts, seed=cfg.seed
    )
    k = cfg.manual_k if cfg.manual_k else cluster_mod.select_k(curve)
    model = cluster_mod.kmeans(
        matrix.X, k, restarts=cfg.restarts, seed=cfg.seed, row_ids=matrix.driver_ids
    )
    cluster_mod.export_model_json(
        model, curve, matrix.column_names, matrix.dropped_columns, arts.model_json
    )
    _write_manifest(arts, "cluster", params, inputs, [arts.model_json])
    return StageResult("cluster", "ran", [str(arts.model_json)])


def _stage_flag(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    inputs = _kin_inputs(arts)
    _require(arts.norms_csv, "norms.csv")
    inputs[arts.norms_csv.name] = _sha256(arts.norms_csv)
    params = {"z_threshold": cfg.z_threshold, "min_run_s": cfg.min_run_s}
    if not force and _up_to_date(arts, "flag", params, inputs):
        return StageResult("flag", "up-to-date", [str(arts.flags_csv)])
    trajs = _load_all_kinematics(arts)
    table = norms_mod.NormsTable.from_csv(arts.norms_csv, cfg.min_trips, cfg.day_mode)
    flags = []
    for traj in trajs:
        flags.extend(
            norms_mod.flag_deviations(
                traj, table, z_threshold=cfg.z_threshold, min_run_s=cfg.min_run_s
            )
        )
    norms_mod.write_flags_csv(flags, arts.flags_csv)
    _write_manifest(arts, "flag", params, inputs, [arts.flags_csv])
    return StageResult("flag", "ran", [str(arts.flags_csv)])


def _round6(x: float) -> float:
    return round(float(x), 6)


def _stage_report(cfg: PipelineConfig, arts: Artifacts, force: bool) -> StageResult:
    for path, name in (
        (arts.model_json, "model.json"),
        (arts.norms_csv, "norms.csv"),
        (arts.network, str(arts.network)),
        (arts.flags_csv, "flags.csv"),
        (arts.features_csv, "features.csv"),
    ):
        _require(path, name)
    inputs = {
        "model.json": _sha256(arts.model_json),
        "norms.csv": _sha256(arts.norms_csv),
        "network": _sha256(arts.network),
        "flags.csv": _sha256(arts.flags_csv),
        "features.csv": _sha256(arts.features_csv),
    }
    inputs.update(_kin_inputs(arts))
    params = {
        "segment_k": cfg.segment_k,
        "report_rides": cfg.report_rides,
        "report_ride_maps": cfg.report_ride_maps,
        "report_segment_map": cfg.report_segment_map,
        "restarts": cfg.restarts,
        "seed": cfg.seed,
    }
    if not force and _up_to_date(arts, "report", params, inputs):
        return StageResult("report", "up-to-date", [str(arts.reports)])

    arts.reports.mkdir(parents=True, exist_ok=True)
    outputs = []

    # (a) segments colored by norm-profile cluster
    if cfg.report_segment_map:
        table = norms_mod.NormsTable.from_csv(arts.norms_csv, cfg.min_trips, cfg.day_mode)
        seg_model = norms_mod.cluster_segments(
            table, cfg.segment_k, restarts=cfg.restarts, seed=cfg.seed
        )
        network = RoadNetwork.from_geojson(arts.network)
        features = []
        for sid, label in zip(seg_model.segment_ids, seg_model.labels):
            seg = network.by_id[sid]
            features.append(
                {
                    "type": "Feature",
                    "properties": {
                        "segment_id": sid,
                        "road_class": seg.road_class,
                        "cluster": int(label),
                    },
                    "geometry": {
                        "type": "LineString",
                        "coordinates": [
                            [_round6(lon), _round6(lat)] for lat, lon in seg.polyline
                        ],
                    },
                }
            )
        seg_path = arts.reports / "segments_clustered.geojson"
        seg_path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
        outputs.append(seg_path)

    # (b) per-ride acceleration map
    kin_files = sorted(arts.kinematics_dir.glob("*.csv"))
    wanted = [r for r in cfg.report_rides.split(",") if r] or (
        [kin_files[0].stem] if kin_files else []
    )
    if not cfg.report_ride_maps:
        wanted = []
    for ride_id in wanted:
        kpath = arts.kinematics_dir / f"{ride_id}.csv"
        _require(kpath, f"kinematics/{ride_id}.csv")
        traj = load_kinematics(kpath)
        points, _ = _read_matches(arts, ride_id)
        times = [p.t for p in points if p is not None]
        snaps = [(p.snap_lat, p.snap_lon) for p in points if p is not None]
        feats = []
        kin = traj.kin
        for i in range(len(kin.t)):
            if traj.segment_ids[i] is None or kin.gap[i]:
                continue
            j = int(np.argmin(np.abs(np.asarray(times) - kin.t[i])))
            lat, lon = snaps[j]
            feats.append(
                {
                    "type": "Feature",
                    "properties": {
                        "t": float(kin.t[i]),
                        "lon_accel": _round6(kin.lon_accel[i]),
                        "lat_accel": _round6(kin.lat_accel[i]),
                        "speed": _round6(kin.speed[i]),
                    },
                    "geometry": {
                        "type": "Point",
                        "coordinates": [_round6(lon), _round6(lat)],
                    },
                }
            )
        rpath = arts.reports / f"ride_accel_{ride_id}.geojson"
        rpath.write_text(json.dumps({"type": "FeatureCollection", "features": feats}))
        outputs.append(rpath)

    # (c) elbow curve
    model_payload = json.loads(arts.model_json.read_text())
    elbow_path = arts.reports / "elbow.csv"
    with elbow_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "wss"])
        curve = model_payload["wss_curve"]
        for k, wss in zip(curve["k"], curve["wss"]):
            writer.writerow([k, repr(wss)])
    outputs.append(elbow_path)

    # (d) cluster characterization
    feats_list = features_mod.read_features_csv(arts.features_csv)
    matrix = features_mod.standardize(feats_list)
    assignments = np.asarray(
        [model_payload["assignments"][d] for d in matrix.driver_ids], dtype=int
    )
    model = cluster_mod.ClusterModel(
        k=model_payload["k"],
        centroids=np.asarray(model_payload["centroids"]),
        assignments=assignments,
        wss=model_payload["wss"],
        seed=model_payload["seed"],
        restarts=model_payload["restarts"],
        n_iter=0,
        row_ids=matrix.driver_ids,
    )
    report = cluster_mod.characterize_clusters(model, matrix)
    report_path = arts.reports / "clusters_report.csv"
    report.to_csv(report_path)
    outputs.append(report_path)

    # (e) flags
    flags_path = arts.reports / "flags.csv"
    flags_path.write_bytes(arts.flags_csv.read_bytes())
    outputs.append(flags_path)

    _write_manifest(arts, "report", params, inputs, outputs)
    return StageResult("report", "ran", [str(p) for p in outputs])


_STAGES = {
    "synth": _stage_synth,
    "ingest": _stage_ingest,
    "match": _stage_match,
    "preprocess": _stage_preprocess,
    "norms": _stage_norms,
    "features": _stage_features,
    "cluster": _stage_cluster,
    "flag": _stage_flag,
    "report": _stage_report,
}


def run_stage(stage: str, cfg: PipelineConfig, force: bool = False) -> StageResult:
    """Run one pipeline stage; no-op with status "up-to-date" when current."""
    if stage not in _STAGES:
        raise RidekitError(f"unknown stage '{stage}'")
    arts = Artifacts(cfg)
    arts.base.mkdir(parents=True, exist_ok=True)
    return _STAGES[stage](cfg, arts, force)
