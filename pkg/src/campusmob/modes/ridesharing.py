"""Online ridesharing on private cars with a homebound waiting list."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import (HOMEBOUND, TO_CAMPUS, Agent, Event, EventKind, EventQueue, Match, MobilityMode, Rules,
                    SimulationError, event_loop, ride_from_schedule, solo_ride)
from ..geo import haversine_m, walking_distance
from ..schedule import DROPOFF, OPEN_WINDOW, PICKUP, Infeasible, Schedule, Stop, TimeWindow, solve_schedule

logger = logging.getLogger(__name__)

DRIVER = "driver"
PASSENGER = "passenger"


def split_requests(agents, rng, min_offset_min: int = 30, max_offset_min: int = 120) -> list[Event]:
    """One arrival event per agent at its submission time and one departure event.

    The departure request is revealed ``U{min..max}`` whole minutes before
    T_D, but never before the agent's own arrival request.
    """
    events = []
    for a in sorted(agents, key=lambda a: a.id):
        offset = int(rng.integers(min_offset_min, max_offset_min + 1))
        events.append(Event(a.request.submission_s, EventKind.ARRIVAL_REQUEST, a.id))
        dep = max(a.request.departure_s - offset * 60, a.request.submission_s)
        events.append(Event(dep, EventKind.DEPARTURE_REQUEST, a.id))
    events.sort()
    return events


def similarity(request_window: TimeWindow, request_home, match_window: TimeWindow, driver_home,
               w_time_per_min: float, w_dist_per_km: float) -> float:
    dt = abs(request_window.center - match_window.center) / 60.0
    dd = haversine_m(request_home, driver_home) / 1000.0
    return w_time_per_min * dt + w_dist_per_km * dd


@dataclass
class WaitingListEntry:
    agent_id: int
    submitted_s: int
    expiry_s: int


class Ridesharing(MobilityMode):
    name = "ridesharing"

    def __init__(self, cfg, router):
        super().__init__(cfg, router)
        self.log_base = cfg.ridesharing_log_base

    def prepare_mode(self, agents) -> None:
        super().prepare_mode(agents)
        self.matches: dict[int, Match] = {}
        self.open: dict[str, dict[int, Match]] = {TO_CAMPUS: {}, HOMEBOUND: {}}
        self.role: dict[int, str] = {}
        self.walk: dict[int, float] = {a.id: 0.0 for a in self.agents}
        self.waitlist: list[WaitingListEntry] = []
        self.lost: list[int] = []
        self.rides = []

    # -- helpers -----------------------------------------------------------------

    def _budgets(self, agent_ids, direction):
        return {a: self.budget(self.by_id[a], direction) for a in agent_ids}

    def _match_window(self, match: Match) -> TimeWindow:
        drv = self.by_id[match.driver].request
        return drv.arrival_window if match.direction == TO_CAMPUS else drv.departure_window

    def _request_window(self, agent: Agent, direction: str) -> TimeWindow:
        return agent.request.arrival_window if direction == TO_CAMPUS else agent.request.departure_window

    def _stops(self, agent: Agent, direction: str, driver: Agent) -> list[Stop]:
        st = self.cfg.stop_time_s
        if direction == TO_CAMPUS:
            return [Stop(agent.campus_position, DROPOFF, agent.id, agent.request.arrival_window, st)]
        if agent.id == driver.id:
            return [Stop(driver.home, DROPOFF, agent.id, service_time_s=st)]
        return [Stop(agent.campus_position, PICKUP, agent.id, agent.request.departure_window, st),
                Stop(driver.home, DROPOFF, agent.id, service_time_s=st)]

    def _solve(self, driver: Agent, members, direction: str, now: int) -> Schedule | Infeasible:
        agents = [driver] + [self.by_id[m] for m in members]
        stops = [s for a in agents for s in self._stops(a, direction, driver)]
        budgets = self._budgets([a.id for a in agents], direction)
        seats = driver.vehicle.seats
        if direction == TO_CAMPUS:
            onboard = [a.id for a in agents]
            window = TimeWindow(now, 10 ** 9) if members else None
            return solve_schedule(driver.home, stops, budgets, self.router, start_window=window,
                                  onboard=onboard, capacity=seats)
        dw = driver.request.departure_window
        lo = max(now, dw.earliest)
        if lo > dw.latest:
            return Infeasible("window", "driver departure window already closed")
        return solve_schedule(driver.campus_position, stops, budgets, self.router,
                              start_window=TimeWindow(lo, dw.latest), onboard=[driver.id], capacity=seats)

    # -- matching ----------------------------------------------------------------

    def rank_matches(self, agent: Agent, direction: str, now: int) -> list[Match]:
        """Open, joinable matches of ``direction`` ordered by similarity, truncated to the candidate cap."""
        win = self._request_window(agent, direction)
        scored = []
        for m in self.open[direction].values():
            if m.closed or m.ride_start < now or len(m.agents) >= m.vehicle.seats:
                continue
            drv = self.by_id[m.driver]
            score = similarity(win, agent.home, self._match_window(m), drv.home,
                               self.cfg.similarity_time_weight_per_min, self.cfg.similarity_distance_weight_per_km)
            scored.append((score, m.id, m))
        scored.sort(key=lambda t: (t[0], t[1]))
        return [m for _, _, m in scored[: self.cfg.max_candidates]]

    def feasible_join(self, agent: Agent, match: Match, now: int) -> Schedule | Infeasible:
        drv = self.by_id[match.driver]
        walk = walking_distance(agent.home, drv.home, self.cfg.walking_detour_factor)
        if walk > self.cfg.accepted_walking_distance_m:
            return Infeasible("walking", f"{walk:.0f} m > {self.cfg.accepted_walking_distance_m:.0f} m")
        if len(match.agents) >= match.vehicle.seats:
            return Infeasible("capacity", "no free seat")
        win = self._request_window(agent, match.direction)
        timed = [s.window for s in match.schedule.stops if s.window != OPEN_WINDOW]
        if not any(w.overlaps(win) for w in timed + [self._match_window(match)]):
            return Infeasible("window", "no overlapping stop window")
        return self._solve(drv, match.members + [agent.id], match.direction, now)

    def assign_or_create(self, agent: Agent, direction: str, now: int, queue: EventQueue) -> Match | None:
        """Join the feasible candidate with the shortest walk; None when nothing is feasible."""
        best = None
        for m in self.rank_matches(agent, direction, now):
            sched = self.feasible_join(agent, m, now)
            if not sched:
                continue
            walk = walking_distance(agent.home, self.by_id[m.driver].home, self.cfg.walking_detour_factor)
            if best is None or (walk, m.id) < (best[0], best[1].id):
                best = (walk, m, sched)
        if best is None:
            return None
        walk, m, sched = best
        self._join(m, agent, sched, walk, queue)
        return m

    def _join(self, m: Match, agent: Agent, sched: Schedule, walk: float, queue: EventQueue) -> None:
        m.members.append(agent.id)
        m.schedule = sched
        m.ride_start = sched.start_time
        self.walk[agent.id] += walk
        queue.push(Event(m.ride_start, EventKind.RIDE_START, m.id))

    def _create(self, driver: Agent, direction: str, now: int, queue: EventQueue) -> Match:
        sched = self._solve(driver, [], direction, now)
        if not sched:
            raise SimulationError(f"agent {driver.id}: own {direction} trip infeasible ({sched.reason}: {sched.detail})")
        m = Match(len(self.matches), direction, driver.vehicle, driver.id, [], sched, sched.start_time)
        self.matches[m.id] = m
        self.open[direction][m.id] = m
        if m.ride_start < now:
            # too late for anyone else to join: leave right away
            self._close(m)
        else:
            queue.push(Event(m.ride_start, EventKind.RIDE_START, m.id))
        return m

    def _close(self, m: Match) -> None:
        m.closed = True
        del self.open[m.direction][m.id]
        self.rides.append(ride_from_schedule(len(self.rides), self.name, m.vehicle, m.driver, m.direction,
                                             m.schedule, self.log_base))

    # -- events ------------------------------------------------------------------

    def handle_arrival(self, agent: Agent, now: int, queue: EventQueue) -> None:
        if self.assign_or_create(agent, TO_CAMPUS, now, queue) is not None:
            self.role[agent.id] = PASSENGER
        else:
            self.role[agent.id] = DRIVER
            self._create(agent, TO_CAMPUS, now, queue)

    def handle_departure(self, agent: Agent, now: int, queue: EventQueue) -> None:
        if agent.id not in self.role:
            raise SimulationError(f"departure request of agent {agent.id} before its arrival request")
        if self.role[agent.id] == DRIVER:
            m = self._create(agent, HOMEBOUND, now, queue)
            self._rescan_waitlist(m, now, queue)
        elif self.assign_or_create(agent, HOMEBOUND, now, queue) is None:
            self.waitlist.append(WaitingListEntry(agent.id, now, agent.request.departure_window.latest))

    def _rescan_waitlist(self, m: Match, now: int, queue: EventQueue) -> None:
        keep = []
        for entry in self.waitlist:
            if not m.closed and len(m.agents) < m.vehicle.seats and m.ride_start >= now:
                agent = self.by_id[entry.agent_id]
                sched = self.feasible_join(agent, m, now)
                if sched:
                    walk = walking_distance(agent.home, self.by_id[m.driver].home, self.cfg.walking_detour_factor)
                    self._join(m, agent, sched, walk, queue)
                    continue
            keep.append(entry)
        self.waitlist = keep

    def _expire(self, now: int) -> None:
        keep = []
        for entry in self.waitlist:
            if now > entry.expiry_s:
                self.lost.append(entry.agent_id)
            else:
                keep.append(entry)
        self.waitlist = keep

    def handle(self, event: Event, queue: EventQueue) -> None:
        now = event.timestamp
        self._expire(now)
        if event.kind == EventKind.ARRIVAL_REQUEST:
            self.handle_arrival(self.by_id[event.payload], now, queue)
        elif event.kind == EventKind.DEPARTURE_REQUEST:
            self.handle_departure(self.by_id[event.payload], now, queue)
        elif event.kind == EventKind.RIDE_START:
            m = self.matches[event.payload]
            if not m.closed and m.ride_start == now:
                self._close(m)
        else:
            raise SimulationError(f"unexpected event {event}")

    def start_mode(self) -> None:
        rng = np.random.default_rng(self.cfg.seed)
        events = split_requests(self.agents, rng, self.cfg.departure_submission_min_offset_min,
                                self.cfg.departure_submission_max_offset_min)
        event_loop(EventQueue(events), self.handle)
        for direction in (TO_CAMPUS, HOMEBOUND):
            if self.open[direction]:
                raise SimulationError(f"{len(self.open[direction])} {direction} matches never started")
        self.lost.extend(e.agent_id for e in self.waitlist)
        self.waitlist = []
        self.lost.sort()

    # -- accounting --------------------------------------------------------------

    def rules(self) -> Rules:
        return Rules(self.cfg.accepted_walking_distance_m, self.cfg.walking_detour_factor, frozenset(self.lost))

    def lost_home_rides(self):
        """Direct private trips home for lost agents (carsharing stand-in)."""
        out = []
        for aid in self.lost:
            a = self.by_id[aid]
            route = self.router.route(a.campus_position, a.home)
            out.append(solo_ride(-1 - len(out), self.name, a, HOMEBOUND, route, a.request.departure_s, None,
                                 tag="carsharing"))
        return out

    def extras(self):
        from ..metrics import ModeExtras
        return ModeExtras(lost_agents=list(self.lost), lost_home_rides=self.lost_home_rides(),
                          lost_penalty_eur=self.cfg.lost_penalty_eur,
                          driving_agents=sum(1 for r in self.role.values() if r == DRIVER))

    def write_additional_results(self, out_dir) -> None:
        if out_dir is None:
            return
        from ..metrics import write_csv
        lost = set(self.lost)
        speed = self.cfg.walking_speed_mps
        rows = ([a.id, f"{self.walk[a.id]:.1f}", int(round(self.walk[a.id] / speed)), int(a.id in lost)]
                for a in sorted(self.agents, key=lambda a: a.id))
        write_csv(Path(out_dir) / self.name / "ridesharingExtra.csv",
                  ["agent_id", "walking_distance_m", "walking_time_s", "lost"], rows)
