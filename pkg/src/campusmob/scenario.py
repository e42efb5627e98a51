"""Demand scenario synthesis and the scenario / distribution file formats.

Scenario file: CSV with header
``agent_id,home_lat,home_lon,campus_id,arrival_s,departure_s,submission_s,parking_lat,parking_lon``.
Leading ``#`` lines carry metadata: ``# seed=``, ``# digest=`` and one
``# campus=<id>,<lat>,<lon>`` line per campus location.

Distribution file: CSV sections introduced by ``[density]``, ``[quartiles]``
and ``[stay]`` lines, each followed by its own header row.  Times are either
``HH:MM`` or integer seconds since midnight.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .config import RunConfig
from .geo import GeoPoint, centroid, destination_point, haversine_m

DAY_S = 86_400
GRID_S = 300
COORD_DECIMALS = 7

SCENARIO_HEADER = ["agent_id", "home_lat", "home_lon", "campus_id", "arrival_s", "departure_s",
                   "submission_s", "parking_lat", "parking_lon"]


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class CampusLocation:
    id: str
    position: GeoPoint


@dataclass(frozen=True)
class ArrivalDensity:
    grid: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.grid or len(self.grid) != len(self.weights):
            raise ScenarioError("density needs equally many grid points and weights")
        if any(w < 0 for w in self.weights):
            raise ScenarioError("density weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ScenarioError(f"density weights sum to {sum(self.weights)!r}, not 1")
        if any(t % GRID_S for t in self.grid):
            raise ScenarioError("density grid must lie on 5-minute marks")
        if any(b - a != GRID_S for a, b in zip(self.grid, self.grid[1:])):
            raise ScenarioError("density grid must be strictly increasing with 300 s spacing")


@dataclass(frozen=True)
class StayQuartileTable:
    starts: tuple[int, int, int, int]
    # per quartile: ((stay_minutes, probability), ...)
    stays: tuple[tuple[tuple[int, float], ...], ...]

    def __post_init__(self):
        if len(self.starts) != 4 or len(self.stays) != 4:
            raise ScenarioError("stay table needs exactly four quartiles")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ScenarioError("quartile boundaries must be increasing")
        for k, dist in enumerate(self.stays, 1):
            if not dist:
                raise ScenarioError(f"quartile {k} has no staying times")
            if any(m <= 0 for m, _ in dist):
                raise ScenarioError(f"quartile {k}: staying times must be positive")
            if any(p < 0 for _, p in dist) or abs(sum(p for _, p in dist) - 1.0) > 1e-9:
                raise ScenarioError(f"quartile {k}: probabilities must be non-negative and sum to 1")

    def quartile_of(self, arrival_s: int) -> int:
        """0-based quartile; an arrival on a boundary belongs to the later quartile."""
        if arrival_s < self.starts[0]:
            raise ScenarioError(f"arrival {arrival_s} precedes the stay table's domain")
        return bisect.bisect_right(self.starts, arrival_s) - 1


@dataclass(frozen=True)
class Distributions:
    density: ArrivalDensity
    stays: StayQuartileTable


@dataclass(frozen=True)
class ScenarioRow:
    agent_id: int
    home: GeoPoint
    campus_id: str
    arrival_s: int
    departure_s: int
    submission_s: int
    parking: GeoPoint


@dataclass(frozen=True)
class DemandScenario:
    rows: tuple[ScenarioRow, ...]
    campuses: tuple[CampusLocation, ...]
    seed: int | None = None
    digest: str = ""

    def campus(self, campus_id: str) -> CampusLocation:
        for c in self.campuses:
            if c.id == campus_id:
                return c
        raise KeyError(campus_id)


# -- regions ---------------------------------------------------------------

@dataclass(frozen=True)
class Annulus:
    center: GeoPoint
    inner_km: float
    outer_km: float

    def __post_init__(self):
        if not 0 <= self.inner_km < self.outer_km:
            raise ScenarioError(f"degenerate annulus [{self.inner_km}, {self.outer_km}] km")


@dataclass(frozen=True)
class Clusters:
    """Homes scattered (2-D Gaussian) around village centres placed uniformly in an annulus."""
    annulus: Annulus
    n_clusters: int
    sigma_m: float


@dataclass(frozen=True)
class LocationFile:
    path: str


def _time_value(raw: str) -> int:
    raw = raw.strip()
    if ":" in raw:
        h, m = raw.split(":")
        return int(h) * 3600 + int(m) * 60
    return int(raw)


def _annulus_points(ann: Annulus, n: int, rng) -> list[GeoPoint]:
    ri, ro = ann.inner_km * 1000, ann.outer_km * 1000
    r = np.sqrt(rng.uniform(ri * ri, ro * ro, size=n))
    b = rng.uniform(0.0, 360.0, size=n)
    return [destination_point(ann.center, float(bb), float(rr)) for rr, bb in zip(r, b)]


def sample_homes(region, n: int, rng) -> list[GeoPoint]:
    """Home locations: area-uniform in an annulus, clustered, or read from a file."""
    if n < 0:
        raise ScenarioError("n must be non-negative")
    if isinstance(region, LocationFile):
        points = []
        with open(region.path, encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or row[0].startswith("#") or row[0].strip() == "lat":
                    continue
                try:
                    points.append(GeoPoint(float(row[0]), float(row[1])))
                except (ValueError, IndexError) as exc:
                    raise ScenarioError(f"{region.path}:{lineno}: malformed location row {row!r}") from exc
        if len(points) < n:
            raise ScenarioError(f"{region.path} holds {len(points)} locations, {n} requested")
        return points[:n]
    if n == 0:
        return []
    if isinstance(region, Annulus):
        return _annulus_points(region, n, rng)
    if isinstance(region, Clusters):
        ann = region.annulus
        centres = _annulus_points(ann, region.n_clusters, rng)
        lo, hi = ann.inner_km * 1000, ann.outer_km * 1000
        out = []
        while len(out) < n:
            k = int(rng.integers(0, len(centres)))
            dx, dy = rng.normal(0.0, region.sigma_m, size=2)
            p = destination_point(centres[k], math.degrees(math.atan2(dx, dy)) % 360.0, math.hypot(dx, dy))
            if lo <= haversine_m(ann.center, p) <= hi:
                out.append(p)
        return out
    raise TypeError(f"unsupported region {region!r}")


def sample_arrival(density: ArrivalDensity, rng) -> int:
    """A grid timestamp drawn with probability proportional to its weight."""
    return int(density.grid[int(rng.choice(len(density.grid), p=np.asarray(density.weights)))])


def sample_stay(table: StayQuartileTable, arrival_s: int, rng) -> int:
    dist = table.stays[table.quartile_of(arrival_s)]
    k = int(rng.choice(len(dist), p=np.asarray([p for _, p in dist])))
    return dist[k][0] * 60


def sample_submission(arrival_s: int, rng, min_offset_min: int = 30, max_offset_min: int = 360) -> int:
    """Uniform whole-minute submission time between the two offsets before arrival.

    The earliest admissible value is clamped at midnight.
    """
    hi = arrival_s - min_offset_min * 60
    if hi < 0:
        raise ScenarioError(f"arrival {arrival_s} s leaves no room for a submission offset")
    lo = max(0, arrival_s - max_offset_min * 60)
    steps = (hi - lo) // 60
    return lo + 60 * int(rng.integers(0, steps + 1))


# -- distribution file -------------------------------------------------------

def default_distribution_text() -> str:
    return resources.files("campusmob.data").joinpath("default_distribution.csv").read_text(encoding="utf-8")


def parse_distributions(text: str) -> Distributions:
    sections: dict[str, list[list[str]]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections[current] = []
            continue
        if current is None:
            raise ScenarioError(f"distribution row outside a section: {line!r}")
        sections[current].append(next(csv.reader([line])))
    for name in ("density", "quartiles", "stay"):
        if name not in sections or len(sections[name]) < 2:
            raise ScenarioError(f"distribution file lacks a [{name}] section with data")
    try:
        dens = [( _time_value(r[0]), float(r[1])) for r in sections["density"][1:]]
        total = sum(w for _, w in dens)
        if total <= 0:
            raise ScenarioError("arrival density has no positive weight")
        density = ArrivalDensity(tuple(t for t, _ in dens), tuple(w / total for _, w in dens))
        q = sorted((int(r[0]), _time_value(r[1])) for r in sections["quartiles"][1:])
        if [k for k, _ in q] != [1, 2, 3, 4]:
            raise ScenarioError("quartile section must list quartiles 1..4")
        per_q: dict[int, list[tuple[int, float]]] = {1: [], 2: [], 3: [], 4: []}
        for r in sections["stay"][1:]:
            per_q[int(r[0])].append((int(r[1]), float(r[2])))
    except (ValueError, IndexError, KeyError) as exc:
        raise ScenarioError(f"malformed distribution file: {exc}") from exc
    stays = []
    for k in (1, 2, 3, 4):
        tot = sum(p for _, p in per_q[k])
        if tot <= 0:
            raise ScenarioError(f"quartile {k} has no positive staying-time probability")
        stays.append(tuple((m, p / tot) for m, p in per_q[k]))
    table = StayQuartileTable(tuple(t for _, t in q), tuple(stays))
    if density.grid[0] < table.starts[0]:
        raise ScenarioError("arrival grid starts before the first quartile")
    return Distributions(density, table)


def load_distributions(path: str | None = None) -> Distributions:
    text = Path(path).read_text(encoding="utf-8") if path else default_distribution_text()
    return parse_distributions(text)


# -- generation ---------------------------------------------------------------

def campus_locations(cfg: RunConfig) -> tuple[CampusLocation, ...]:
    return tuple(CampusLocation(c.id, c.position) for c in cfg.campuses)


def home_region(cfg: RunConfig):
    center = centroid(c.position for c in cfg.campuses)
    ann = Annulus(center, cfg.inner_radius_km, cfg.outer_radius_km)
    if cfg.home_sampler == "file":
        return LocationFile(cfg.home_file)
    if cfg.home_sampler == "clusters":
        return Clusters(ann, cfg.n_clusters, cfg.cluster_sigma_m)
    return ann


def _round_point(p: GeoPoint) -> GeoPoint:
    return GeoPoint(round(p.lat, COORD_DECIMALS), round(p.lon, COORD_DECIMALS))


def generate_scenario(cfg: RunConfig, seed: int) -> DemandScenario:
    """Synthesize a full demand scenario from the config; identical seeds give identical output."""
    dist = load_distributions(cfg.distribution_file or None)
    campuses = campus_locations(cfg)
    rng = np.random.default_rng(seed)
    n = cfg.n_agents

    homes = [_round_point(p) for p in sample_homes(home_region(cfg), n, rng)]
    shares = np.array([c.share for c in cfg.campuses], dtype=float)
    campus_idx = rng.choice(len(campuses), size=n, p=shares / shares.sum()) if n else []
    rows = []
    for i in range(n):
        arrival = sample_arrival(dist.density, rng)
        departure = arrival + sample_stay(dist.stays, arrival, rng)
        submission = sample_submission(arrival, rng)
        if departure >= DAY_S:
            raise ScenarioError(f"agent {i}: departure {departure} s leaves the simulated day")
        campus = campuses[int(campus_idx[i])]
        rows.append(ScenarioRow(i, homes[i], campus.id, arrival, departure, submission, campus.position))

    h = hashlib.sha256()
    h.update(cfg.digest.encode())
    h.update(repr(dist).encode())
    h.update(str(seed).encode())
    return DemandScenario(tuple(rows), campuses, seed, h.hexdigest())


# -- file I/O -----------------------------------------------------------------

def _fmt_coord(x: float) -> str:
    return f"{x:.{COORD_DECIMALS}f}"


def scenario_to_text(scenario: DemandScenario) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={'' if scenario.seed is None else scenario.seed}\n")
    buf.write(f"# digest={scenario.digest}\n")
    for c in scenario.campuses:
        buf.write(f"# campus={c.id},{_fmt_coord(c.position.lat)},{_fmt_coord(c.position.lon)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCENARIO_HEADER)
    for r in scenario.rows:
        w.writerow([r.agent_id, _fmt_coord(r.home.lat), _fmt_coord(r.home.lon), r.campus_id, r.arrival_s,
                    r.departure_s, r.submission_s, _fmt_coord(r.parking.lat), _fmt_coord(r.parking.lon)])
    return buf.getvalue()


def write_scenario(scenario: DemandScenario, path) -> None:
    Path(path).write_text(scenario_to_text(scenario), encoding="utf-8", newline="")


def read_scenario(path) -> DemandScenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    seed = None
    digest = ""
    campuses: dict[str, GeoPoint] = {}
    body = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "seed" and value:
                seed = int(value)
            elif key == "digest":
                digest = value
            elif key == "campus":
                cid, lat, lon = value.split(",")
                campuses[cid] = GeoPoint(float(lat), float(lon))
            continue
        if line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header != SCENARIO_HEADER:
        raise ScenarioError(f"{path}: unexpected header {header!r}")
    rows = []
    seen = set()
    for lineno, rec in enumerate(reader, 2):
        try:
            row = ScenarioRow(int(rec[0]), GeoPoint(float(rec[1]), float(rec[2])), rec[3], int(rec[4]),
                              int(rec[5]), int(rec[6]), GeoPoint(float(rec[7]), float(rec[8])))
        except (ValueError, IndexError) as exc:
            raise ScenarioError(f"{path}: data row {lineno}: {exc}") from exc
        if row.agent_id in seen:
            raise ScenarioError(f"{path}: duplicate agent id {row.agent_id}")
        seen.add(row.agent_id)
        validate_row(row)
        # without campus metadata the parking coordinate stands in for the campus position
        campuses.setdefault(row.campus_id, row.parking)
        rows.append(row)
    return DemandScenario(tuple(rows), tuple(CampusLocation(k, v) for k, v in campuses.items()), seed, digest)


def validate_row(row: ScenarioRow) -> None:
    if not row.departure_s > row.arrival_s:
        raise ScenarioError(f"agent {row.agent_id}: departure must follow arrival")
    if not row.submission_s < row.arrival_s:
        raise ScenarioError(f"agent {row.agent_id}: submission must precede arrival")
    for t in (row.arrival_s, row.departure_s, row.submission_s):
        if not 0 <= t < DAY_S:
            raise ScenarioError(f"agent {row.agent_id}: timestamp {t} outside the simulated day")
