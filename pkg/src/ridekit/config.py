"""Pipeline configuration: flat TOML file, every key overridable by a CLI flag."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import RidekitError


class ConfigInvalid(RidekitError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"config key '{field}': {reason}")
        self.field = field
        self.reason = reason


@dataclass
class PipelineConfig:
    # paths
    output_dir: str = "out"
    corpus_dir: str = "out/corpus"
    network_file: str = "out/network.geojson"
    cache_file: str = "out/match_cache.csv"

    # preprocessing filter
    filter_kind: str = "moving_average"  # moving_average | l1_trend | tv
    ma_window_s: float = 1.0
    l1_lambda: float = 50.0
    tv_lambda: float = 5.0

    # matcher
    matcher_kind: str = "offline"  # offline | fixture
    fixture_file: str = ""
    fallback_offline: bool = False
    candidate_radius_m: float = 50.0
    sigma_m: float = 5.0
    kappa: float = 3.0
    rho_per_m: float = 0.1

    # norms
    min_trips: int = 40
    z_threshold: float = 3.0
    min_run_s: int = 3
    day_mode: str = "weekend_split"  # weekend_split | seven_day

    # features
    min_km: float = 5.0
    hard_accel_mps2: float = 2.5
    hard_brake_mps2: float = -3.0
    sharp_turn_mps2: float = 3.0

    # clustering
    k_min: int = 1
    k_max: int = 10
    restarts: int = 20
    seed: int = 7
    manual_k: int = 0  # 0 = pick from the elbow
    segment_k: int = 2

    # reports / execution
    report_rides: str = ""  # comma-separated ride ids; empty = first ride
    report_ride_maps: bool = True  # emit per-ride acceleration GeoJSON
    report_segment_map: bool = True  # emit the clustered-segment GeoJSON
    jobs: int = 1

    # synthetic corpus stage
    synth_grid_n: int = 6
    synth_block_m: float = 150.0
    synth_highway: bool = True
    synth_mix: str = "conformer:8:3,slow_cautious:4:3,aggressive:4:3,sharp_turner:4:3,mild_fast:4:3"
    synth_duration_s: float = 360.0
    synth_rotate_fraction: float = 0.0
    synth_highway_fraction: float = 0.25


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}

_CHOICES = {
    "filter_kind": ("moving_average", "l1_trend", "tv"),
    "matcher_kind": ("offline", "fixture"),
    "day_mode": ("weekend_split", "seven_day"),
}


def _coerce(key: str, value):
    target = _FIELDS[key].type
    try:
        if target == "bool" or isinstance(_FIELDS[key].default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
            raise ValueError(f"cannot read {value!r} as a boolean")
        if isinstance(_FIELDS[key].default, int) and not isinstance(
            _FIELDS[key].default, bool
        ):
            return int(value)
        if isinstance(_FIELDS[key].default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(key, str(exc)) from exc


def validate(cfg: PipelineConfig) -> PipelineConfig:
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            raise ConfigInvalid(key, f"must be one of {choices}")
    if cfg.k_min < 1 or cfg.k_max < cfg.k_min:
        raise ConfigInvalid("k_max", "need 1 <= k_min <= k_max")
    if cfg.min_trips < 1:
        raise ConfigInvalid("min_trips", "must be >= 1")
    if cfg.jobs < 1:
        raise ConfigInvalid("jobs", "must be >= 1")
    if cfg.restarts < 1:
        raise ConfigInvalid("restarts", "must be >= 1")
    if cfg.ma_window_s <= 0:
        raise ConfigInvalid("ma_window_s", "must be positive")
    if min(cfg.l1_lambda, cfg.tv_lambda) < 0:
        raise ConfigInvalid("l1_lambda", "must be non-negative")
    if cfg.matcher_kind == "fixture" and not cfg.fixture_file:
        raise ConfigInvalid("fixture_file", "required when matcher_kind = 'fixture'")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build a config from an optional TOML file plus key=value overrides."""
    values: dict = {}
    if path is not None:
        raw = tomllib.loads(Path(path).read_text())
        for key, value in raw.items():
            if key not in _FIELDS:
                raise ConfigInvalid(key, "unknown key")
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigInvalid(key, "unknown key")
        if value is not None:
            values[key] = _coerce(key, value)
    return validate(PipelineConfig(**values))


def parse_mix(text: str):
    """Parse 'name:drivers:rides,...' into (name, n_drivers, rides_each) triples."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigInvalid("synth_mix", f"bad entry {part!r}, want name:drivers:rides")
        out.append((bits[0], int(bits[1]), int(bits[2])))
    if not out:
        raise ConfigInvalid("synth_mix", "empty mix")
    return out
