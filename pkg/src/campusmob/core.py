"""Shared domain model, the discrete-event queue and the mode execution pipeline."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from enum import IntEnum

from .config import RunConfig
from .geo import GeoPoint, Route, walking_distance
from .scenario import DemandScenario
from .schedule import DROPOFF, PICKUP, RideTimeBudget, Schedule, TimeWindow, accepted_ride_time

logger = logging.getLogger(__name__)

TO_CAMPUS = "to-campus"
HOMEBOUND = "homebound"
MIXED = "mixed"

PRIVATE = "private"
SHUTTLE = "shuttle"


class SimulationError(RuntimeError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ConstraintViolationError(RuntimeError):
    def __init__(self, mode: str, violations):
        self.mode = mode
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:5])
        super().__init__(f"{mode}: {len(self.violations)} constraint violation(s): {head}")


@dataclass(frozen=True)
class Vehicle:
    id: str
    kind: str
    seats: int
    fuel_l_per_km: float
    # grams per km for private cars, grams per litre for shuttles
    emission_rate: float
    fuel_price_eur_per_l: float
    driver: int | None = None

    def __post_init__(self):
        if self.seats < 1:
            raise ValueError("a vehicle needs at least one seat")
        if min(self.fuel_l_per_km, self.emission_rate, self.fuel_price_eur_per_l) <= 0:
            raise ValueError("vehicle rates must be positive")


def student_vehicle(cfg: RunConfig, owner: int | None) -> Vehicle:
    return Vehicle(f"car-{owner}", PRIVATE, cfg.student_seats, cfg.student_fuel_l_per_km,
                   cfg.student_co2_g_per_km, cfg.student_fuel_price_eur_per_l, owner)


def shuttle_vehicle(cfg: RunConfig, index: int) -> Vehicle:
    return Vehicle(f"shuttle-{index}", SHUTTLE, cfg.shuttle_seats, cfg.shuttle_fuel_l_per_km,
                   cfg.shuttle_co2_g_per_l, cfg.shuttle_fuel_price_eur_per_l)


@dataclass(frozen=True)
class TravelRequest:
    agent_id: int
    arrival_s: int
    departure_s: int
    submission_s: int
    arrival_window: TimeWindow
    departure_window: TimeWindow
    parking: GeoPoint


@dataclass(frozen=True)
class Agent:
    id: int
    home: GeoPoint
    campus: str
    campus_position: GeoPoint
    vehicle: Vehicle
    request: TravelRequest


def build_agents(scenario: DemandScenario, cfg: RunConfig) -> list[Agent]:
    """Materialize agents with their time windows and private cars."""
    fm = cfg.flexible_time_s
    campuses = {c.id: c.position for c in scenario.campuses}
    agents = []
    for row in sorted(scenario.rows, key=lambda r: r.agent_id):
        if row.campus_id not in campuses:
            raise ValueError(f"agent {row.agent_id}: unknown campus id {row.campus_id!r}")
        req = TravelRequest(
            row.agent_id, row.arrival_s, row.departure_s, row.submission_s,
            TimeWindow(row.arrival_s - fm, row.arrival_s + fm),
            TimeWindow(row.departure_s, row.departure_s + 2 * fm),
            row.parking,
        )
        agents.append(Agent(row.agent_id, row.home, row.campus_id, campuses[row.campus_id],
                            student_vehicle(cfg, row.agent_id), req))
    return agents


@dataclass
class Match:
    id: int
    direction: str
    vehicle: Vehicle
    driver: int | None
    members: list[int]
    schedule: Schedule
    ride_start: int
    segment: int | None = None
    closed: bool = False

    @property
    def agents(self) -> list[int]:
        return ([self.driver] if self.driver is not None else []) + list(self.members)


@dataclass(frozen=True)
class RideStop:
    location: GeoPoint
    kind: str
    agent_id: int
    arrival_s: int
    departure_s: int


@dataclass
class Ride:
    id: int
    mode: str
    vehicle: Vehicle
    driver: int | None
    direction: str
    agents: tuple[int, ...]
    start_s: int
    end_s: int
    start: GeoPoint
    end: GeoPoint
    stops: tuple[RideStop, ...]
    legs: tuple[Route, ...]
    log_base: float | None = None
    tag: str = ""

    @property
    def distance_m(self) -> float:
        return sum(leg.distance_m for leg in self.legs)

    @property
    def duration_s(self) -> int:
        return self.end_s - self.start_s

    @property
    def occupancy(self) -> int:
        return len(self.agents)

    def board_and_alight(self, agent_id: int) -> tuple[int, int]:
        """Indices of the agent's pickup and dropoff stops."""
        p = d = None
        for i, s in enumerate(self.stops):
            if s.agent_id == agent_id:
                if s.kind == PICKUP:
                    p = i
                else:
                    d = i
        return p, d

    def vehicle_departure(self, index: int) -> int:
        """When the vehicle leaves the halt containing stop ``index``."""
        loc = self.stops[index].location
        j = index
        while j + 1 < len(self.stops) and self.stops[j + 1].location == loc:
            j += 1
        return self.stops[j].departure_s

    def in_vehicle_time(self, agent_id: int) -> int:
        p, d = self.board_and_alight(agent_id)
        return self.stops[d].arrival_s - self.vehicle_departure(p)

    def agent_distance(self, agent_id: int) -> float:
        p, d = self.board_and_alight(agent_id)
        return sum(leg.distance_m for leg in self.legs[p + 1:d + 1])


def _zero_leg(p: GeoPoint) -> Route:
    return Route(p, p, 0.0, 0, (p,))


def ride_from_schedule(ride_id: int, mode: str, vehicle: Vehicle, driver: int | None, direction: str,
                       schedule: Schedule, log_base: float | None, *, from_first_stop: bool = False,
                       tag: str = "") -> Ride:
    """Turn a solved schedule into a ride.

    Agents aboard at the schedule start get a pickup stop there.  With
    ``from_first_stop`` the ride begins at the first stop and the approach
    leg is left out (it is accounted as repositioning).
    """
    stops = []
    legs = []
    t0 = schedule.start_time
    for a in sorted(schedule.onboard, key=lambda a: (a != driver, a)):
        stops.append(RideStop(schedule.start, PICKUP, a, t0, t0))
        legs.append(_zero_leg(schedule.start))
    for stop, arr, dep, leg in zip(schedule.stops, schedule.arrival_times, schedule.departure_times,
                                   schedule.legs):
        stops.append(RideStop(stop.location, stop.kind, stop.agent_id, arr, dep))
        legs.append(leg)
    start, start_s = schedule.start, t0
    if from_first_stop and schedule.stops and not schedule.onboard:
        start, start_s = schedule.stops[0].location, schedule.arrival_times[0]
        legs[0] = _zero_leg(start)
    agents = tuple(dict.fromkeys(s.agent_id for s in stops))
    return Ride(ride_id, mode, vehicle, driver, direction, agents, start_s, schedule.end_time, start,
                schedule.end_location, tuple(stops), tuple(legs), log_base, tag)


def solo_ride(ride_id: int, mode: str, agent: Agent, direction: str, route: Route, start_s: int,
              log_base: float | None, tag: str = "") -> Ride:
    end_s = start_s + route.duration_s
    a, b = route.origin, route.destination
    stops = (RideStop(a, PICKUP, agent.id, start_s, start_s), RideStop(b, DROPOFF, agent.id, end_s, end_s))
    return Ride(ride_id, mode, agent.vehicle, agent.id, direction, (agent.id,), start_s, end_s, a, b, stops,
                (_zero_leg(a), route), log_base, tag)


# -- events -------------------------------------------------------------------

class EventKind(IntEnum):
    ARRIVAL_REQUEST = 0
    DEPARTURE_REQUEST = 1
    PAIRED_REQUEST = 2
    RIDE_START = 3


@dataclass(frozen=True, order=True)
class Event:
    timestamp: int
    kind: EventKind
    payload: int


class EventQueue:
    """Timestamp-ordered queue; ties resolve by kind, then payload id."""

    def __init__(self, events=()):
        self._heap = list(events)
        heapq.heapify(self._heap)
        self.now: int | None = None

    def __len__(self):
        return len(self._heap)

    def push(self, event: Event) -> None:
        if self.now is not None and event.timestamp < self.now:
            raise SimulationError(f"event {event} scheduled before current time {self.now}")
        heapq.heappush(self._heap, event)

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.timestamp
        return ev


def event_loop(queue: EventQueue, handler) -> int:
    """Feed events to ``handler(event, queue)`` in order; returns the number handled."""
    count = 0
    while queue:
        handler(queue.pop(), queue)
        count += 1
    return count


# -- constraint referee --------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    ride_id: int | None
    agent_id: int | None
    detail: str

    def __str__(self):
        return f"{self.kind} (ride {self.ride_id}, agent {self.agent_id}): {self.detail}"


@dataclass
class Rules:
    walking_limit_m: float = 0.0
    walking_detour_factor: float = 1.0
    lost: frozenset = frozenset()
    excluded: frozenset = frozenset()


def check_constraints(rides, agents, router, rules: Rules) -> list[Violation]:
    """Mode-agnostic referee over emitted rides.

    Checks window containment, seat capacity at every instant, walking
    distance, in-vehicle time against the ride's budget base, stop/leg
    bookkeeping, and that every agent got exactly one ride per direction
    (lost agents: no homebound ride).
    """
    by_id = {a.id: a for a in agents}
    out: list[Violation] = []
    seen: dict[tuple[int, str], int] = {}
    eps = 1e-6
    for ride in rides:
        aboard = set()
        for s in ride.stops:
            if s.kind == PICKUP:
                if s.agent_id in aboard:
                    out.append(Violation("precedence", ride.id, s.agent_id, "picked up twice"))
                aboard.add(s.agent_id)
                if len(aboard) > ride.vehicle.seats:
                    out.append(Violation("capacity", ride.id, s.agent_id,
                                         f"{len(aboard)} aboard > {ride.vehicle.seats} seats"))
            else:
                if s.agent_id not in aboard:
                    out.append(Violation("precedence", ride.id, s.agent_id, "dropped before pickup"))
                aboard.discard(s.agent_id)
        if aboard:
            out.append(Violation("precedence", ride.id, None, f"agents never dropped: {sorted(aboard)}"))
        service = sum(s.departure_s - s.arrival_s for s in ride.stops)
        if sum(leg.duration_s for leg in ride.legs) != ride.end_s - ride.start_s - service:
            out.append(Violation("bookkeeping", ride.id, None, "leg durations do not add up"))

        for aid in ride.agents:
            agent = by_id.get(aid)
            if agent is None:
                out.append(Violation("unknown-agent", ride.id, aid, "agent not in scenario"))
                continue
            key = (aid, ride.direction)
            if key in seen:
                out.append(Violation("duplicate", ride.id, aid, f"second {ride.direction} ride"))
            seen[key] = ride.id
            p, d = ride.board_and_alight(aid)
            if p is None or d is None:
                continue
            pick, drop = ride.stops[p], ride.stops[d]
            req = agent.request
            if ride.direction == TO_CAMPUS:
                if not req.arrival_window.contains(drop.arrival_s):
                    out.append(Violation("window", ride.id, aid, f"arrival {drop.arrival_s} outside "
                                         f"[{req.arrival_window.earliest}, {req.arrival_window.latest}]"))
                if drop.location != agent.campus_position:
                    out.append(Violation("destination", ride.id, aid, "not dropped at own campus"))
                walk = walking_distance(agent.home, pick.location, rules.walking_detour_factor)
                direct = router.route(agent.home, agent.campus_position).duration_s
            else:
                departure = pick.arrival_s
                if not req.departure_window.contains(departure):
                    out.append(Violation("window", ride.id, aid, f"departure {departure} outside "
                                         f"[{req.departure_window.earliest}, {req.departure_window.latest}]"))
                if pick.location != agent.campus_position:
                    out.append(Violation("origin", ride.id, aid, "not picked up at own campus"))
                walk = walking_distance(drop.location, agent.home, rules.walking_detour_factor)
                direct = router.route(agent.campus_position, agent.home).duration_s
            if walk > rules.walking_limit_m + eps:
                out.append(Violation("walking", ride.id, aid, f"walk {walk:.1f} m > {rules.walking_limit_m} m"))
            if ride.log_base is not None:
                ivt = ride.in_vehicle_time(aid)
                allowed = accepted_ride_time(RideTimeBudget(direct, ride.log_base))
                if ivt > allowed + eps:
                    out.append(Violation("budget", ride.id, aid, f"in vehicle {ivt} s > {allowed:.1f} s"))

    for a in agents:
        if a.id in rules.excluded:
            continue
        if (a.id, TO_CAMPUS) not in seen:
            out.append(Violation("unserved", None, a.id, "no ride to campus"))
        if (a.id, HOMEBOUND) not in seen and a.id not in rules.lost:
            out.append(Violation("unserved", None, a.id, "no ride home and not marked lost"))
        if (a.id, HOMEBOUND) in seen and a.id in rules.lost:
            out.append(Violation("lost", seen[(a.id, HOMEBOUND)], a.id, "lost agent has a ride home"))
    return out


# -- mode pipeline ---------------------------------------------------------------

STAGES = ("prepareMode", "startMode", "checkConstraints", "writeResults", "writeAdditionalResults")


class MobilityMode:
    """Template every mobility mode follows.

    Subclasses implement :meth:`start_mode` (filling ``self.rides``) and may
    override the other hooks.  ``check_constraints`` runs the central referee.
    """

    name = "mode"
    log_base: float | None = None

    def __init__(self, cfg: RunConfig, router):
        self.cfg = cfg
        self.router = router
        self.agents: list[Agent] = []
        self.rides: list[Ride] = []
        self.stage_log: list[str] = []
        self.summary = None
        # baseline DaySummary for percentage fields, set by the orchestrator
        self.baseline = None

    def prepare_mode(self, agents) -> None:
        self.agents = list(agents)
        self.by_id = {a.id: a for a in self.agents}

    def start_mode(self) -> None:
        raise NotImplementedError

    def rules(self) -> Rules:
        return Rules(walking_detour_factor=self.cfg.walking_detour_factor)

    def check_constraints(self) -> list[Violation]:
        return check_constraints(self.rides, self.agents, self.router, self.rules())

    def extras(self):
        from .metrics import ModeExtras
        return ModeExtras()

    def write_results(self, out_dir) -> None:
        from .metrics import summarize, write_mode_results
        self.summary = summarize(self.name, self.rides, self.agents, self.extras(), self.baseline)
        if out_dir is not None:
            write_mode_results(out_dir, self.name, self.rides, self.agents, self.summary, self.cfg.digest)

    def write_additional_results(self, out_dir) -> None:
        pass

    def direct_route(self, agent: Agent, direction: str) -> Route:
        if direction == TO_CAMPUS:
            return self.router.route(agent.home, agent.campus_position)
        return self.router.route(agent.campus_position, agent.home)

    def budget(self, agent: Agent, direction: str) -> RideTimeBudget:
        return RideTimeBudget(self.direct_route(agent, direction).duration_s, self.log_base)


@dataclass
class ModeResult:
    mode: MobilityMode
    stage_log: list[str] = field(default_factory=list)

    @property
    def summary(self):
        return self.mode.summary


def execute_mode(mode: MobilityMode, agents, out_dir=None) -> ModeResult:
    """Run the five pipeline stages in order; constraint violations abort before any output."""
    steps = [
        ("prepareMode", lambda: mode.prepare_mode(agents)),
        ("startMode", mode.start_mode),
        ("checkConstraints", mode.check_constraints),
        ("writeResults", lambda: mode.write_results(out_dir)),
        ("writeAdditionalResults", lambda: mode.write_additional_results(out_dir)),
    ]
    for stage, fn in steps:
        mode.stage_log.append(stage)
        logger.info("%s: %s", mode.name, stage)
        try:
            result = fn()
        except Exception as exc:
            raise StageError(stage, exc) from exc
        if stage == "checkConstraints" and result:
            raise ConstraintViolationError(mode.name, result)
    return ModeResult(mode, list(mode.stage_log))
