"""Depot-based shuttle pooling with circle-segment candidate pruning.

Every agent submits one paired request.  The campus leg and the return leg
are assigned as one transaction: if either fails, all tentative changes are
undone and the agent drives their own car both ways.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..config import DepotSpec
from ..core import (HOMEBOUND, TO_CAMPUS, Agent, Event, EventKind, EventQueue, Match, MobilityMode, Rules,
                    SimulationError, event_loop, ride_from_schedule, shuttle_vehicle, solo_ride)
from ..geo import GeoPoint, bearing_segment, centroid, haversine_m
from ..schedule import (DROPOFF, MAX_STOPS, OPEN_WINDOW, PICKUP, Infeasible, Schedule, Stop, TimeWindow,
                        accepted_ride_time, solve_schedule)

logger = logging.getLogger(__name__)

FAR_FUTURE = 10 ** 9


@dataclass
class Depot:
    id: str
    position: GeoPoint
    capacity: int


@dataclass
class ShuttleDiary:
    index: int
    vehicle: object
    depot: int
    # match ids ordered by schedule start
    matches: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class Slot:
    """Where and when a vehicle becomes available, and what it must reach next."""
    position: GeoPoint
    earliest: int
    succ_location: GeoPoint | None = None
    succ_arrival: int | None = None


@dataclass
class VehicleReport:
    vehicle_id: str
    rides: int = 0
    passengers: int = 0
    distance_m: float = 0.0
    empty_distance_m: float = 0.0
    time_s: int = 0


def default_depots(cfg) -> list[DepotSpec]:
    """One depot per campus location with capacities summing to the fleet size."""
    n = len(cfg.campuses)
    base, extra = divmod(cfg.fleet_size, n)
    return [DepotSpec(f"depot-{c.id}", c.position, base + (1 if i < extra else 0))
            for i, c in enumerate(cfg.campuses)]


def assign_segment(home: GeoPoint, campus: GeoPoint, center: GeoPoint, n_segments: int,
                   exclusion_radius_m: float) -> int | None:
    """Circle segment of a home around ``center``; None strictly inside the exclusion radius of its campus."""
    if haversine_m(home, campus) < exclusion_radius_m:
        return None
    return bearing_segment(center, home, n_segments)


def segments_compatible(a: int | None, b: int | None, n_segments: int) -> bool:
    if a is None or b is None:
        return True
    return (a - b) % n_segments in (0, 1, n_segments - 1)


class Ridepooling(MobilityMode):
    name = "ridepooling"

    def __init__(self, cfg, router):
        super().__init__(cfg, router)
        self.log_base = cfg.ridepooling_log_base
        # test hook: called as fault_injector(agent, direction); True forces that leg to fail
        self.fault_injector = None

    def prepare_mode(self, agents) -> None:
        super().prepare_mode(agents)
        cfg = self.cfg
        specs = list(cfg.depots) or default_depots(cfg)
        self.depots = [Depot(d.id, d.position, d.capacity) for d in specs]
        if sum(d.capacity for d in self.depots) < cfg.fleet_size:
            raise SimulationError("total depot capacity is smaller than the fleet")
        self.diaries: list[ShuttleDiary] = []
        depot_iter = (i for i, d in enumerate(self.depots) for _ in range(d.capacity))
        for k in range(cfg.fleet_size):
            self.diaries.append(ShuttleDiary(k, shuttle_vehicle(cfg, k), next(depot_iter)))
        self.center = centroid([c.position for c in cfg.campuses]) if cfg.campuses else \
            centroid(sorted({a.campus_position for a in self.agents}))
        self.segment = {a.id: assign_segment(a.home, a.campus_position, self.center, cfg.n_segments,
                                             cfg.segment_exclusion_radius_m) for a in self.agents}
        self.matches: dict[int, Match] = {}
        self.vehicle_of: dict[int, int] = {}
        self.next_match_id = 0
        self.pooled: dict[int, tuple[int, int]] = {}
        self.fallback: list[int] = []
        self.rides = []
        self.empty_legs = []
        self.reports: list[VehicleReport] = []
        self._undo = None
        self._pending: list[Event] = []

    # -- state helpers -------------------------------------------------------------

    def state_fingerprint(self) -> str:
        """Digest of all shuttle diaries and match contents."""
        h = hashlib.sha256()
        h.update(repr(self.next_match_id).encode())
        for d in self.diaries:
            h.update(repr((d.index, d.depot, tuple(d.matches))).encode())
            for mid in d.matches:
                m = self.matches[mid]
                s = m.schedule
                h.update(repr((m.id, m.direction, tuple(m.members), m.ride_start, m.segment, m.closed,
                               s.start, s.start_time, tuple(st.stop_id for st in s.stops),
                               s.arrival_times)).encode())
        h.update(repr(sorted(self.vehicle_of.items())).encode())
        return h.hexdigest()

    def _begin(self) -> None:
        self._undo = []
        self._pending = []

    def _log(self, entry) -> None:
        if self._undo is not None:
            self._undo.append(entry)

    def _commit(self, queue: EventQueue) -> None:
        for ev in self._pending:
            queue.push(ev)
        self._undo = None
        self._pending = []

    def _rollback(self) -> None:
        for entry in reversed(self._undo):
            kind = entry[0]
            if kind == "join":
                _, m, members, schedule, ride_start, segment, diary, order = entry
                m.members, m.schedule, m.ride_start, m.segment = members, schedule, ride_start, segment
                self.diaries[diary].matches = order
            elif kind == "new":
                _, m, diary, order, next_id = entry
                del self.matches[m.id]
                del self.vehicle_of[m.id]
                self.diaries[diary].matches = order
                self.next_match_id = next_id
        self._undo = None
        self._pending = []

    def _depot_position(self, diary: ShuttleDiary) -> GeoPoint:
        return self.depots[diary.depot].position

    def _slot_around(self, diary: ShuttleDiary, mid: int) -> Slot:
        """Availability before and successor after match ``mid`` in its diary."""
        order = diary.matches
        i = order.index(mid)
        if i > 0:
            p = self.matches[order[i - 1]].schedule
            pos, earliest = p.end_location, p.end_time
        else:
            pos, earliest = self._depot_position(diary), 0
        if i + 1 < len(order):
            s = self.matches[order[i + 1]].schedule
            return Slot(pos, earliest, s.stops[0].location, s.arrival_times[0])
        return Slot(pos, earliest)

    def _free_slot(self, diary: ShuttleDiary, span: TimeWindow) -> Slot | None:
        """The gap containing ``span``, or None if some committed match overlaps it."""
        pos, earliest = self._depot_position(diary), 0
        for mid in diary.matches:
            s = self.matches[mid].schedule
            if s.end_time <= span.earliest:
                pos, earliest = s.end_location, s.end_time
                continue
            if s.start_time >= span.latest:
                return Slot(pos, earliest, s.stops[0].location, s.arrival_times[0])
            return None
        return Slot(pos, earliest)

    def _reorder(self, diary: ShuttleDiary) -> list[int]:
        old = list(diary.matches)
        diary.matches.sort(key=lambda mid: (self.matches[mid].schedule.arrival_times[0], mid))
        return old

    # -- request legs ------------------------------------------------------------------

    def leg_stops(self, agent: Agent, direction: str) -> list[Stop]:
        st = self.cfg.stop_time_s
        req = agent.request
        if direction == TO_CAMPUS:
            return [Stop(agent.home, PICKUP, agent.id, OPEN_WINDOW, st),
                    Stop(agent.campus_position, DROPOFF, agent.id, req.arrival_window, st)]
        return [Stop(agent.campus_position, PICKUP, agent.id, req.departure_window, st),
                Stop(agent.home, DROPOFF, agent.id, OPEN_WINDOW, st)]

    def pickup_location(self, agent: Agent, direction: str) -> GeoPoint:
        return agent.home if direction == TO_CAMPUS else agent.campus_position

    def request_span(self, agent: Agent, direction: str) -> TimeWindow:
        allowed = int(accepted_ride_time(self.budget(agent, direction))) + 1
        st = 2 * self.cfg.stop_time_s
        if direction == TO_CAMPUS:
            w = agent.request.arrival_window
            return TimeWindow(w.earliest - allowed - st, w.latest)
        w = agent.request.departure_window
        return TimeWindow(w.earliest, w.latest + allowed + st)

    def _solve_in_slot(self, members, direction: str, slot: Slot, now: int) -> Schedule | Infeasible:
        stops = [s for aid in members for s in self.leg_stops(self.by_id[aid], direction)]
        budgets = {aid: self.budget(self.by_id[aid], direction) for aid in members}
        lo = max(now, slot.earliest)
        hi = FAR_FUTURE
        for _ in range(4):
            if hi < lo:
                return Infeasible("diary", "no start time fits between neighbouring rides")
            sched = solve_schedule(slot.position, stops, budgets, self.router, start_window=TimeWindow(lo, hi),
                                   capacity=self.cfg.shuttle_seats)
            if not sched and hi < FAR_FUTURE:
                # feasible only with a start that misses the next ride
                return Infeasible("diary", f"would miss the next committed ride ({sched.reason})")
            if not sched or slot.succ_location is None:
                return sched
            reach = sched.end_time + self.router.route(sched.end_location, slot.succ_location).duration_s
            excess = reach - slot.succ_arrival
            if excess <= 0:
                return sched
            hi = sched.start_time - excess
        return Infeasible("diary", "would miss the next committed ride")

    # -- candidates ----------------------------------------------------------------------

    def candidate_matches(self, agent: Agent, direction: str, now: int) -> list[Match]:
        """Joinable matches in the same or a bordering segment, most similar first."""
        seg = self.segment[agent.id]
        n = self.cfg.n_segments
        limit = min(self.cfg.shuttle_seats, MAX_STOPS // 2)
        ranked = []
        for m in self.matches.values():
            if m.closed or m.direction != direction or m.ride_start < now or len(m.members) >= limit:
                continue
            if not segments_compatible(seg, m.segment, n):
                continue
            same = seg is not None and m.segment == seg
            served = any(self.by_id[x].campus == agent.campus for x in m.members)
            dist = min(haversine_m(agent.home, self.by_id[x].home) for x in m.members)
            ranked.append(((not same, not served, dist, m.id), m))
        ranked.sort(key=lambda t: t[0])
        return [m for _, m in ranked]

    def feasible_insert(self, agent: Agent, match: Match, now: int) -> Schedule | Infeasible:
        if len(match.members) >= self.cfg.shuttle_seats:
            return Infeasible("capacity", "vehicle fully booked")
        diary = self.diaries[self.vehicle_of[match.id]]
        slot = self._slot_around(diary, match.id)
        return self._solve_in_slot(match.members + [agent.id], match.direction, slot, now)

    def free_vehicles(self, agent: Agent, direction: str):
        """(beeline distance, diary, slot) for vehicles idle over the request span, nearest first."""
        span = self.request_span(agent, direction)
        pick = self.pickup_location(agent, direction)
        out = []
        for d in self.diaries:
            slot = self._free_slot(d, span)
            if slot is not None:
                out.append((haversine_m(slot.position, pick), d.index, slot))
        out.sort(key=lambda t: (t[0], t[1]))
        return out

    def _reachable(self, agent: Agent, direction: str, slot: Slot, now: int) -> bool:
        """Cheap lower-bound test before running the solver."""
        v = self.cfg.driving_speed_kmh / 3.6
        start = max(now, slot.earliest)
        if direction == TO_CAMPUS:
            d = haversine_m(slot.position, agent.home) + haversine_m(agent.home, agent.campus_position)
            return start + d / v <= agent.request.arrival_window.latest
        d = haversine_m(slot.position, agent.campus_position)
        return start + d / v <= agent.request.departure_window.latest

    def first_free(self, agent: Agent, direction: str, now: int):
        failed = set()
        for dist, idx, slot in self.free_vehicles(agent, direction):
            if slot in failed:
                continue
            if not self._reachable(agent, direction, slot, now):
                failed.add(slot)
                continue
            sched = self._solve_in_slot([agent.id], direction, slot, now)
            if sched:
                return dist, idx, sched
            failed.add(slot)
        return None

    def choose_assignment(self, agent: Agent, direction: str, now: int):
        """("join", match, schedule), ("new", diary index, schedule) or None."""
        cands = self.candidate_matches(agent, direction, now)
        k = self.cfg.evaluated_matches
        best = None
        for start in range(0, len(cands), k):
            for m in cands[start:start + k]:
                sched = self.feasible_insert(agent, m, now)
                if sched and (best is None or (sched.total_travel_s, m.id) < (best[1].total_travel_s, best[0].id)):
                    best = (m, sched)
            if best is not None:
                break
        free = self.first_free(agent, direction, now)
        if best is not None:
            m, sched = best
            if free is not None:
                pick = self.pickup_location(agent, direction)
                nearest_join = min(haversine_m(s.location, pick) for s in sched.stops
                                   if s.kind == PICKUP and s.agent_id != agent.id)
                if free[0] < nearest_join:
                    return ("new", free[1], free[2])
            return ("join", m, sched)
        if free is not None:
            return ("new", free[1], free[2])
        return None

    # -- commitments -----------------------------------------------------------------

    def _apply(self, agent: Agent, direction: str, choice) -> Match:
        kind = choice[0]
        if kind == "join":
            _, m, sched = choice
            diary = self.diaries[self.vehicle_of[m.id]]
            self._log(("join", m, list(m.members), m.schedule, m.ride_start, m.segment, diary.index,
                       list(diary.matches)))
            m.members = m.members + [agent.id]
            if m.segment is None:
                m.segment = self.segment[agent.id]
        else:
            _, idx, sched = choice
            diary = self.diaries[idx]
            m = Match(self.next_match_id, direction, diary.vehicle, None, [agent.id], sched, sched.start_time,
                      self.segment[agent.id])
            self._log(("new", m, idx, list(diary.matches), self.next_match_id))
            self.next_match_id += 1
            self.matches[m.id] = m
            self.vehicle_of[m.id] = idx
            diary.matches.append(m.id)
        m.schedule = sched
        m.ride_start = sched.start_time
        self._reorder(diary)
        self._pending.append(Event(m.ride_start, EventKind.RIDE_START, m.id))
        return m

    def assign_leg(self, agent: Agent, direction: str, now: int) -> Match | None:
        if self.fault_injector is not None and self.fault_injector(agent, direction):
            return None
        choice = self.choose_assignment(agent, direction, now)
        if choice is None:
            return None
        return self._apply(agent, direction, choice)

    def process_paired_request(self, agent: Agent, now: int, queue: EventQueue) -> bool:
        """Pool both legs or neither; True when the agent is pooled."""
        self._begin()
        there = self.assign_leg(agent, TO_CAMPUS, now)
        back = self.assign_leg(agent, HOMEBOUND, now) if there is not None else None
        if there is None or back is None:
            self._rollback()
            self.fallback.append(agent.id)
            return False
        self._commit(queue)
        self.pooled[agent.id] = (there.id, back.id)
        return True

    def handle(self, event: Event, queue: EventQueue) -> None:
        now = event.timestamp
        if event.kind == EventKind.PAIRED_REQUEST:
            self.process_paired_request(self.by_id[event.payload], now, queue)
        elif event.kind == EventKind.RIDE_START:
            m = self.matches.get(event.payload)
            if m is not None and not m.closed and m.ride_start == now:
                m.closed = True
        else:
            raise SimulationError(f"unexpected event {event}")

    def start_mode(self) -> None:
        events = [Event(a.request.submission_s, EventKind.PAIRED_REQUEST, a.id)
                  for a in sorted(self.agents, key=lambda a: a.id)]
        event_loop(EventQueue(events), self.handle)
        self._finalize()

    # -- end of day ----------------------------------------------------------------------

    def _finalize(self) -> None:
        rides = []
        order = sorted(self.matches.values(), key=lambda m: (m.schedule.start_time, self.vehicle_of[m.id], m.id))
        ride_of = {}
        for m in order:
            r = ride_from_schedule(len(rides), self.name, m.vehicle, None, m.direction, m.schedule,
                                   self.log_base, from_first_stop=True)
            ride_of[m.id] = r
            rides.append(r)
        for aid in sorted(self.fallback):
            a = self.by_id[aid]
            there = self.router.route(a.home, a.campus_position)
            back = self.router.route(a.campus_position, a.home)
            rides.append(solo_ride(len(rides), self.name, a, TO_CAMPUS, there,
                                   a.request.arrival_s - there.duration_s, None, tag="fallback"))
            rides.append(solo_ride(len(rides), self.name, a, HOMEBOUND, back, a.request.departure_s, None,
                                   tag="fallback"))
        self.rides = rides
        self.ride_of = ride_of
        self.depot_logistics()

    def depot_logistics(self) -> None:
        """Depot egress, repositioning between rides and the return to the nearest depot with room."""
        from ..metrics import EmptyLeg
        occupancy = [0] * len(self.depots)
        for d in self.diaries:
            if not d.matches:
                occupancy[d.depot] += 1
        reports = [VehicleReport(d.vehicle.id) for d in self.diaries]
        legs = []
        returns = []
        for d in self.diaries:
            rep = reports[d.index]
            pos = self._depot_position(d)
            for mid in d.matches:
                ride = self.ride_of[mid]
                approach = self.router.route(pos, ride.start)
                legs.append((d.index, approach))
                rep.rides += 1
                rep.passengers += ride.occupancy
                rep.distance_m += ride.distance_m
                rep.time_s += ride.duration_s
                rep.empty_distance_m += self._idle_distance(ride)
                pos = ride.end
            if d.matches:
                last = self.ride_of[d.matches[-1]]
                returns.append((last.end_s, d.index, last.end))
        for _, idx, pos in sorted(returns):
            ranked = sorted(range(len(self.depots)),
                            key=lambda j: (haversine_m(pos, self.depots[j].position), j))
            for j in ranked:
                if occupancy[j] < self.depots[j].capacity:
                    occupancy[j] += 1
                    legs.append((idx, self.router.route(pos, self.depots[j].position)))
                    break
            else:
                raise SimulationError("all depots are full")
        self.empty_legs = []
        for idx, route in legs:
            if route.distance_m == 0 and route.duration_s == 0:
                continue
            rep = reports[idx]
            rep.distance_m += route.distance_m
            rep.empty_distance_m += route.distance_m
            rep.time_s += route.duration_s
            self.empty_legs.append(EmptyLeg(self.diaries[idx].vehicle, route.distance_m, route.duration_s))
        self.reports = reports
        self.depot_occupancy = occupancy

    @staticmethod
    def _idle_distance(ride) -> float:
        """Distance inside a ride driven with nobody aboard."""
        aboard = 0
        idle = 0.0
        for stop, leg in zip(ride.stops, ride.legs):
            if aboard == 0:
                idle += leg.distance_m
            aboard += 1 if stop.kind == PICKUP else -1
        return idle

    def shuttle_day_report(self) -> list[VehicleReport]:
        return list(self.reports)

    # -- accounting ------------------------------------------------------------------------

    def rules(self) -> Rules:
        return Rules(0.0, self.cfg.walking_detour_factor)

    def extras(self):
        from ..metrics import ModeExtras
        idle = sum(self._idle_distance(r) for r in self.ride_of.values())
        return ModeExtras(empty_legs=list(self.empty_legs), empty_in_ride_m=idle,
                          driving_agents=len(self.fallback))

    def write_additional_results(self, out_dir) -> None:
        if out_dir is None:
            return
        from ..metrics import write_csv
        rows = ([r.vehicle_id, r.rides, r.passengers, f"{r.distance_m:.1f}", f"{r.empty_distance_m:.1f}", r.time_s]
                for r in self.reports)
        write_csv(Path(out_dir) / self.name / "ridepoolingVehicles.csv",
                  ["vehicle_id", "rides", "passengers", "distance_m", "empty_distance_m", "time_s"], rows)
