"""Emission, fuel-cost and occupancy accounting plus the framework result files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import PRIVATE, SHUTTLE, Ride, Vehicle


def ride_co2(distance_m: float, vehicle: Vehicle) -> float:
    """CO2 grams: g/km for private cars, g/l times l/km for shuttles."""
    km = distance_m / 1000.0
    if vehicle.kind == PRIVATE:
        return km * vehicle.emission_rate
    if vehicle.kind == SHUTTLE:
        return km * vehicle.fuel_l_per_km * vehicle.emission_rate
    raise ValueError(f"unknown vehicle kind {vehicle.kind!r}")


def ride_fuel_cost(distance_m: float, vehicle: Vehicle) -> float:
    return distance_m / 1000.0 * vehicle.fuel_l_per_km * vehicle.fuel_price_eur_per_l


@dataclass(frozen=True)
class RideMetrics:
    distance_m: float
    duration_s: int
    co2_g: float
    fuel_cost_eur: float
    occupancy: int


def ride_metrics(ride: Ride) -> RideMetrics:
    d = ride.distance_m
    return RideMetrics(d, ride.duration_s, ride_co2(d, ride.vehicle), ride_fuel_cost(d, ride.vehicle),
                       ride.occupancy)


@dataclass(frozen=True)
class EmptyLeg:
    """Shuttle travel outside any ride (depot legs, repositioning)."""
    vehicle: Vehicle
    distance_m: float
    duration_s: int


@dataclass
class ModeExtras:
    empty_legs: list[EmptyLeg] = field(default_factory=list)
    # distance driven inside rides with nobody aboard
    empty_in_ride_m: float = 0.0
    lost_agents: list[int] = field(default_factory=list)
    # direct home rides of lost agents (included only in the * variant)
    lost_home_rides: list[Ride] = field(default_factory=list)
    lost_penalty_eur: float = 0.0
    driving_agents: int | None = None


@dataclass
class DaySummary:
    mode: str
    variant: str
    agents: int
    rides: int
    rides_multi: int
    driving_agents: int
    lost: int
    total_distance_m: float
    total_time_s: int
    total_co2_g: float
    total_fuel_cost_eur: float
    penalty_eur: float
    empty_distance_m: float
    avg_co2_per_agent_g: float
    avg_co2_per_ride_g: float
    avg_cost_per_agent_eur: float
    avg_cost_per_ride_eur: float
    avg_occupancy: float
    pct_distance: float | None = None
    pct_time: float | None = None
    pct_co2: float | None = None
    pct_cost: float | None = None
    alt: "DaySummary | None" = None


def _pct(value, base):
    return None if not base else value / base * 100.0


def summarize(mode: str, rides, agents, extras: ModeExtras | None = None,
              baseline: DaySummary | None = None) -> DaySummary:
    """Day totals and averages.

    With lost agents present, the returned summary is the variant including
    their direct rides home plus the cost penalty; ``summary.alt`` holds the
    variant excluding both.
    """
    extras = extras or ModeExtras()
    base = _summarize(mode, "excl_lost", list(rides), agents, extras, 0.0)
    if extras.lost_agents or extras.lost_home_rides:
        incl = _summarize(mode, "incl_lost", list(rides) + list(extras.lost_home_rides), agents, extras,
                          extras.lost_penalty_eur * len(extras.lost_agents))
        incl.alt = base
        out = incl
    else:
        base.variant = "all"
        out = base
    if baseline is not None:
        apply_baseline(out, baseline)
    return out


def _summarize(mode, variant, rides, agents, extras: ModeExtras, penalty) -> DaySummary:
    n_agents = len(agents)
    metrics = [ride_metrics(r) for r in rides]
    dist = sum(m.distance_m for m in metrics) + sum(e.distance_m for e in extras.empty_legs)
    time = sum(m.duration_s for m in metrics) + sum(e.duration_s for e in extras.empty_legs)
    co2 = sum(m.co2_g for m in metrics) + sum(ride_co2(e.distance_m, e.vehicle) for e in extras.empty_legs)
    cost = (sum(m.fuel_cost_eur for m in metrics)
            + sum(ride_fuel_cost(e.distance_m, e.vehicle) for e in extras.empty_legs) + penalty)
    n_rides = len(rides)
    if extras.driving_agents is not None:
        driving = extras.driving_agents
    else:
        driving = len({r.driver for r in rides if r.vehicle.kind == PRIVATE and r.driver is not None})
    empty = sum(e.distance_m for e in extras.empty_legs) + extras.empty_in_ride_m
    return DaySummary(
        mode=mode, variant=variant, agents=n_agents, rides=n_rides,
        rides_multi=sum(1 for m in metrics if m.occupancy > 1),
        driving_agents=driving, lost=len(extras.lost_agents),
        total_distance_m=dist, total_time_s=time, total_co2_g=co2, total_fuel_cost_eur=cost,
        penalty_eur=penalty, empty_distance_m=empty,
        avg_co2_per_agent_g=co2 / n_agents if n_agents else 0.0,
        avg_co2_per_ride_g=co2 / n_rides if n_rides else 0.0,
        avg_cost_per_agent_eur=cost / n_agents if n_agents else 0.0,
        avg_cost_per_ride_eur=cost / n_rides if n_rides else 0.0,
        avg_occupancy=sum(m.occupancy for m in metrics) / n_rides if n_rides else 0.0,
    )


def apply_baseline(summary: DaySummary, baseline: DaySummary) -> None:
    for s in (summary, summary.alt):
        if s is None:
            continue
        s.pct_distance = _pct(s.total_distance_m, baseline.total_distance_m)
        s.pct_time = _pct(s.total_time_s, baseline.total_time_s)
        s.pct_co2 = _pct(s.total_co2_g, baseline.total_co2_g)
        s.pct_cost = _pct(s.total_fuel_cost_eur, baseline.total_fuel_cost_eur)


@dataclass
class AgentMetrics:
    agent_id: int
    campus_id: str
    rides: int = 0
    drove: int = 0
    distance_m: float = 0.0
    time_s: int = 0
    co2_g: float = 0.0
    fuel_cost_eur: float = 0.0


def agent_metrics(rides, agents) -> dict[int, AgentMetrics]:
    """Per-agent in-vehicle distance/time and an equal share of each ride's emissions and cost."""
    out = {a.id: AgentMetrics(a.id, a.campus) for a in agents}
    for ride in rides:
        m = ride_metrics(ride)
        share = len(ride.agents)
        for aid in ride.agents:
            am = out[aid]
            am.rides += 1
            am.drove = am.drove or int(ride.driver == aid and ride.vehicle.kind == PRIVATE)
            am.distance_m += ride.agent_distance(aid)
            am.time_s += ride.in_vehicle_time(aid)
            am.co2_g += m.co2_g / share
            am.fuel_cost_eur += m.fuel_cost_eur / share
    return out


# -- files ---------------------------------------------------------------------

RIDE_COLUMNS = ["ride_id", "mode", "direction", "tag", "vehicle_id", "vehicle_kind", "driver_id", "agents",
                "occupancy", "start_s", "end_s", "start_lat", "start_lon", "end_lat", "end_lon",
                "distance_m", "duration_s", "co2_g", "fuel_cost_eur", "stops"]
AGENT_COLUMNS = ["agent_id", "campus_id", "rides", "drove", "distance_m", "time_s", "co2_g", "fuel_cost_eur"]
SUMMARY_FIELDS = ["rides", "rides_multi", "driving_agents", "lost", "total_distance_km", "total_time_min",
                  "total_co2_g", "total_fuel_cost_eur", "penalty_eur", "empty_distance_km",
                  "avg_co2_per_agent_g", "avg_co2_per_ride_g", "avg_cost_per_agent_eur",
                  "avg_cost_per_ride_eur", "avg_occupancy"]
PCT_FIELDS = ["pct_distance", "pct_time", "pct_co2", "pct_cost"]


def summary_columns(with_pct: bool) -> list[str]:
    fields_ = SUMMARY_FIELDS + (PCT_FIELDS if with_pct else [])
    return ["mode", "agents"] + fields_ + [f"excl_lost_{f}" for f in fields_] + ["config_digest"]


def _f(x, nd):
    return "" if x is None else f"{x:.{nd}f}"


def _g(x):
    return "" if x is None else str(int(round(x)))


def _stop_text(ride: Ride) -> str:
    return " ".join(f"{'P' if s.kind == 'pickup' else 'D'}{s.agent_id}@{s.arrival_s}" for s in ride.stops)


def ride_rows(rides):
    for r in rides:
        m = ride_metrics(r)
        yield [r.id, r.mode, r.direction, r.tag, r.vehicle.id, r.vehicle.kind,
               "" if r.driver is None else r.driver, " ".join(map(str, r.agents)), r.occupancy,
               r.start_s, r.end_s, f"{r.start.lat:.7f}", f"{r.start.lon:.7f}", f"{r.end.lat:.7f}",
               f"{r.end.lon:.7f}", _f(m.distance_m, 1), m.duration_s, _g(m.co2_g), _f(m.fuel_cost_eur, 2),
               _stop_text(r)]


def _summary_values(s: DaySummary, with_pct: bool) -> list:
    out = [s.rides, s.rides_multi, s.driving_agents, s.lost, _f(s.total_distance_m / 1000, 1),
           _f(s.total_time_s / 60, 1), _g(s.total_co2_g), _f(s.total_fuel_cost_eur, 2), _f(s.penalty_eur, 2),
           _f(s.empty_distance_m / 1000, 1), _g(s.avg_co2_per_agent_g), _g(s.avg_co2_per_ride_g),
           _f(s.avg_cost_per_agent_eur, 2), _f(s.avg_cost_per_ride_eur, 2), _f(s.avg_occupancy, 3)]
    if with_pct:
        out += [_f(s.pct_distance, 2), _f(s.pct_time, 2), _f(s.pct_co2, 2), _f(s.pct_cost, 2)]
    return out


def summary_row(s: DaySummary, digest: str, with_pct: bool = False) -> list:
    alt = s.alt if s.alt is not None else s
    return [s.mode, s.agents] + _summary_values(s, with_pct) + _summary_values(alt, with_pct) + [digest]


def _open(path: Path):
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(path, header, rows) -> None:
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_mode_results(out_dir, mode: str, rides, agents, summary: DaySummary, digest: str) -> None:
    """Write rideResults.csv, agentResults.csv and summarizedResults.csv for one mode.

    Percentage columns appear only when the summary was compared against a baseline.
    """
    d = Path(out_dir) / mode
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / "rideResults.csv", RIDE_COLUMNS, ride_rows(rides))
    am = agent_metrics(rides, agents)
    write_csv(d / "agentResults.csv", AGENT_COLUMNS,
              ([m.agent_id, m.campus_id, m.rides, m.drove, _f(m.distance_m, 1), m.time_s, _g(m.co2_g),
                _f(m.fuel_cost_eur, 2)] for m in am.values()))
    with_pct = summary.pct_distance is not None
    write_csv(d / "summarizedResults.csv", summary_columns(with_pct), [summary_row(summary, digest, with_pct)])


def write_summaries(out_dir, summaries, digest: str, with_pct: bool = False) -> Path:
    """One row per mode; with ``with_pct`` the baseline row reads 100 and others relative to it."""
    path = Path(out_dir) / "summarizedResults.csv"
    write_csv(path, summary_columns(with_pct), [summary_row(s, digest, with_pct) for s in summaries])
    return path


def summary_dict(s: DaySummary) -> dict:
    d = {f.name: getattr(s, f.name) for f in fields(s) if f.name != "alt"}
    alt = s.alt if s.alt is not None else s
    d.update({f"excl_lost_{f.name}": getattr(alt, f.name) for f in fields(alt) if f.name not in ("alt", "mode")})
    return d
