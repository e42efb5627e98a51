"""Run configuration: loading, validation and digesting.

The config is an INI-style file (stdlib :mod:`configparser`): ``key = value``
lines grouped into sections.  Scalar keys live in fixed sections
(``[scenario]``, ``[routing]``, ``[common]``, ``[vehicles]``,
``[ridesharing]``, ``[ridepooling]``, ``[run]``); campus locations and
depots are repeated sections ``[campus:<id>]`` and ``[depot:<id>]``.

Every key flagged as a base-case parameter must be present in the file.
The remaining artifact keys fall back to the values in the shipped
``data/table1.ini``.  Unknown keys and sections are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .geo import GeoPoint

MODES = ("everybodydrives", "ridesharing", "ridepooling")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CampusSpec:
    id: str
    position: GeoPoint
    share: float


@dataclass(frozen=True)
class DepotSpec:
    id: str
    position: GeoPoint
    capacity: int


# (section, key, type, required_in_file)
_SCHEMA: list[tuple[str, str, type, bool]] = [
    ("scenario", "n_agents", int, False),
    ("scenario", "inner_radius_km", float, True),
    ("scenario", "outer_radius_km", float, True),
    ("scenario", "home_sampler", str, False),
    ("scenario", "home_file", str, False),
    ("scenario", "n_clusters", int, False),
    ("scenario", "cluster_sigma_m", float, False),
    ("scenario", "distribution_file", str, False),
    ("routing", "backend", str, False),
    ("routing", "graph_file", str, False),
    ("routing", "driving_speed_kmh", float, False),
    ("routing", "detour_factor", float, False),
    ("routing", "walking_detour_factor", float, False),
    ("routing", "walking_speed_mps", float, False),
    ("common", "flexible_time_min", int, True),
    ("common", "stop_time_min", float, True),
    ("vehicles", "student_seats", int, True),
    ("vehicles", "student_fuel_l_per_km", float, True),
    ("vehicles", "student_co2_g_per_km", float, True),
    ("vehicles", "student_fuel_price_eur_per_l", float, True),
    ("vehicles", "shuttle_seats", int, True),
    ("vehicles", "shuttle_fuel_l_per_km", float, True),
    ("vehicles", "shuttle_co2_g_per_l", float, True),
    ("vehicles", "shuttle_fuel_price_eur_per_l", float, True),
    ("ridesharing", "accepted_walking_distance_m", float, True),
    ("ridesharing", "ridesharing_log_base", float, True),
    ("ridesharing", "similarity_time_weight_per_min", float, False),
    ("ridesharing", "similarity_distance_weight_per_km", float, False),
    ("ridesharing", "max_candidates", int, False),
    ("ridesharing", "lost_penalty_eur", float, False),
    ("ridesharing", "departure_submission_min_offset_min", int, False),
    ("ridesharing", "departure_submission_max_offset_min", int, False),
    ("ridepooling", "fleet_size", int, True),
    ("ridepooling", "ridepooling_log_base", float, True),
    ("ridepooling", "n_segments", int, True),
    ("ridepooling", "segment_exclusion_radius_m", float, True),
    ("ridepooling", "evaluated_matches", int, False),
    ("run", "seed", int, False),
    ("run", "output_dir", str, False),
    ("run", "modes", str, False),
]

KEYS = {key: (section, typ, required) for section, key, typ, required in _SCHEMA}
SECTIONS = sorted({s for s, *_ in _SCHEMA})


@dataclass(frozen=True)
class RunConfig:
    n_agents: int
    inner_radius_km: float
    outer_radius_km: float
    home_sampler: str
    home_file: str
    n_clusters: int
    cluster_sigma_m: float
    distribution_file: str
    backend: str
    graph_file: str
    driving_speed_kmh: float
    detour_factor: float
    walking_detour_factor: float
    walking_speed_mps: float
    flexible_time_min: int
    stop_time_min: float
    student_seats: int
    student_fuel_l_per_km: float
    student_co2_g_per_km: float
    student_fuel_price_eur_per_l: float
    shuttle_seats: int
    shuttle_fuel_l_per_km: float
    shuttle_co2_g_per_l: float
    shuttle_fuel_price_eur_per_l: float
    accepted_walking_distance_m: float
    ridesharing_log_base: float
    similarity_time_weight_per_min: float
    similarity_distance_weight_per_km: float
    max_candidates: int
    lost_penalty_eur: float
    departure_submission_min_offset_min: int
    departure_submission_max_offset_min: int
    fleet_size: int
    ridepooling_log_base: float
    n_segments: int
    segment_exclusion_radius_m: float
    evaluated_matches: int
    seed: int
    output_dir: str
    modes: str
    campuses: tuple[CampusSpec, ...] = ()
    depots: tuple[DepotSpec, ...] = ()
    source_digest: str = field(default="", compare=False)

    @property
    def flexible_time_s(self) -> int:
        return self.flexible_time_min * 60

    @property
    def stop_time_s(self) -> int:
        return int(round(self.stop_time_min * 60))

    @property
    def mode_list(self) -> list[str]:
        return [m.strip() for m in self.modes.split(",") if m.strip()]

    def replace(self, **changes) -> "RunConfig":
        unknown = [k for k in changes if k not in KEYS]
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        coerced = {k: _coerce(k, KEYS[k][1], v) for k, v in changes.items()}
        cfg = dataclasses.replace(self, **coerced)
        validate(cfg)
        return cfg

    @property
    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode("utf-8")).hexdigest()


def _coerce(key: str, typ: type, value):
    try:
        if typ is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            if isinstance(value, str) and not value.strip().lstrip("+-").isdigit():
                raise ValueError(value)
            return int(value)
        if typ is float:
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r}: expected {typ.__name__}, got {value!r}") from None


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    p.optionxform = str
    return p


def default_config_text() -> str:
    return resources.files("campusmob.data").joinpath("table1.ini").read_text(encoding="utf-8")


def _parse(text: str, source: str, base_dir: Path | None, defaults: dict | None) -> RunConfig:
    p = _parser()
    try:
        p.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    values: dict = {}
    campuses = []
    depots = []
    for section in p.sections():
        if section.startswith("campus:") or section.startswith("depot:"):
            kind, _, ident = section.partition(":")
            need = {"lat", "lon", "share"} if kind == "campus" else {"lat", "lon", "capacity"}
            have = set(p[section])
            if have - need:
                raise ConfigError(f"[{section}]: unknown key(s) {', '.join(sorted(have - need))}")
            if need - have:
                raise ConfigError(f"[{section}]: missing key(s) {', '.join(sorted(need - have))}")
            try:
                pos = GeoPoint(float(p[section]["lat"]), float(p[section]["lon"]))
            except ValueError as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
            if kind == "campus":
                campuses.append(CampusSpec(ident.strip(), pos, _coerce("share", float, p[section]["share"])))
            else:
                depots.append(DepotSpec(ident.strip(), pos, _coerce("capacity", int, p[section]["capacity"])))
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in p[section].items():
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            want_section, typ, _ = KEYS[key]
            if want_section != section:
                raise ConfigError(f"key {key!r} belongs in [{want_section}], found in [{section}]")
            values[key] = _coerce(key, typ, raw)

    for key, (section, _, required) in KEYS.items():
        if key in values:
            continue
        if required or defaults is None:
            raise ConfigError(f"missing key {key!r} in [{section}]")
        values[key] = defaults[key]
    if not campuses:
        if defaults is None:
            raise ConfigError("at least one [campus:<id>] section is required")
        campuses = list(defaults["campuses"])
    if base_dir is not None:
        for key in ("home_file", "distribution_file", "graph_file", "output_dir"):
            if values[key] and not Path(values[key]).is_absolute():
                values[key] = str(base_dir / values[key])
    cfg = RunConfig(**values, campuses=tuple(campuses), depots=tuple(depots),
                    source_digest=hashlib.sha256(text.encode("utf-8")).hexdigest())
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    errors = []
    if not cfg.inner_radius_km < cfg.outer_radius_km:
        errors.append("inner_radius_km must be smaller than outer_radius_km")
    if cfg.inner_radius_km < 0:
        errors.append("inner_radius_km must be non-negative")
    positive = ["driving_speed_kmh", "walking_speed_mps", "student_seats", "shuttle_seats",
                "student_fuel_l_per_km", "student_co2_g_per_km", "student_fuel_price_eur_per_l",
                "shuttle_fuel_l_per_km", "shuttle_co2_g_per_l", "shuttle_fuel_price_eur_per_l",
                "n_segments", "max_candidates", "evaluated_matches", "cluster_sigma_m", "n_clusters"]
    for key in positive:
        if getattr(cfg, key) <= 0:
            errors.append(f"{key} must be positive")
    non_negative = ["n_agents", "flexible_time_min", "stop_time_min", "accepted_walking_distance_m",
                    "lost_penalty_eur", "fleet_size", "segment_exclusion_radius_m"]
    for key in non_negative:
        if getattr(cfg, key) < 0:
            errors.append(f"{key} must be non-negative")
    if cfg.detour_factor < 1 or cfg.walking_detour_factor < 1:
        errors.append("detour factors must be >= 1")
    for key in ("ridesharing_log_base", "ridepooling_log_base"):
        if getattr(cfg, key) <= 1:
            errors.append(f"{key} must be > 1")
    if not 0 <= cfg.departure_submission_min_offset_min <= cfg.departure_submission_max_offset_min:
        errors.append("departure submission offsets must satisfy 0 <= min <= max")
    if cfg.home_sampler not in ("annulus", "clusters", "file"):
        errors.append(f"home_sampler must be annulus, clusters or file, not {cfg.home_sampler!r}")
    if cfg.home_sampler == "file" and not cfg.home_file:
        errors.append("home_sampler = file requires home_file")
    if cfg.backend not in ("beeline", "graph"):
        errors.append(f"backend must be beeline or graph, not {cfg.backend!r}")
    if cfg.backend == "graph" and not cfg.graph_file:
        errors.append("backend = graph requires graph_file")
    for m in cfg.mode_list:
        if m not in MODES:
            errors.append(f"unknown mode {m!r}")
    ids = [c.id for c in cfg.campuses]
    if len(set(ids)) != len(ids):
        errors.append("campus ids must be unique")
    if len({c.position for c in cfg.campuses}) != len(cfg.campuses):
        errors.append("campus positions must be pairwise distinct")
    if any(c.share < 0 for c in cfg.campuses) or (cfg.campuses and sum(c.share for c in cfg.campuses) <= 0):
        errors.append("campus shares must be non-negative with a positive sum")
    if cfg.depots:
        if any(d.capacity < 0 for d in cfg.depots):
            errors.append("depot capacities must be non-negative")
        if sum(d.capacity for d in cfg.depots) < cfg.fleet_size:
            errors.append("total depot capacity is smaller than fleet_size")
    if errors:
        raise ConfigError("; ".join(errors))


def default_config() -> RunConfig:
    """The shipped base-case configuration."""
    return _parse(default_config_text(), "table1.ini", None, None)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    defaults = dataclasses.asdict(default_config())
    defaults["campuses"] = default_config().campuses
    return _parse(text, str(path), path.parent, defaults)


def dump_config(cfg: RunConfig) -> str:
    """Canonical INI serialization; the digest is taken over this text."""
    p = _parser()
    for section in SECTIONS:
        p.add_section(section)
    for key, (section, _, _) in KEYS.items():
        p[section][key] = str(getattr(cfg, key))
    for c in cfg.campuses:
        p[f"campus:{c.id}"] = {"lat": repr(c.position.lat), "lon": repr(c.position.lon), "share": repr(c.share)}
    for d in cfg.depots:
        p[f"depot:{d.id}"] = {"lat": repr(d.position.lat), "lon": repr(d.position.lon), "capacity": str(d.capacity)}
    buf = io.StringIO()
    p.write(buf)
    return buf.getvalue()
