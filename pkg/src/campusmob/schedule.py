"""Exact stop-sequencing under time windows, a no-waiting rule and ride-time budgets.

A vehicle leaves ``start`` (optionally with agents already aboard) and must
visit every :class:`Stop` exactly once.  Timing rules:

* Arrival at a stop = departure from the previous position + leg duration.
  The vehicle never idles, so arriving before a window opens is infeasible;
  only the start time is free and absorbs slack.
* Consecutive stops at the same location form one halt: they share the
  arrival time and the service time is charged once, when the vehicle leaves
  (the service time of the last stop visited there).
* In-vehicle time of an agent = dropoff arrival - (pickup arrival + pickup
  service), or dropoff arrival - start for agents aboard at the start.

:func:`solve_schedule` enumerates orderings with a label-setting dynamic
program over (visited subset, last stop) with Pareto-dominance pruning, which
keeps it exact while staying fast for the <= 14 stops a ride can have.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .geo import GeoPoint, Route

PICKUP = "pickup"
DROPOFF = "dropoff"

MAX_STOPS = 14
DAY_HORIZON_S = 2 * 86_400


class TooManyStopsError(ValueError):
    pass


class ScheduleInconsistency(ValueError):
    pass


@dataclass(frozen=True)
class TimeWindow:
    earliest: int
    latest: int

    def __post_init__(self):
        if self.earliest > self.latest:
            raise ValueError(f"empty time window [{self.earliest}, {self.latest}]")

    def contains(self, t: float) -> bool:
        return self.earliest <= t <= self.latest

    def overlaps(self, other: "TimeWindow") -> bool:
        return self.earliest <= other.latest and other.earliest <= self.latest

    @property
    def center(self) -> float:
        return (self.earliest + self.latest) / 2


OPEN_WINDOW = TimeWindow(0, DAY_HORIZON_S)


@dataclass(frozen=True)
class Stop:
    location: GeoPoint
    kind: str
    agent_id: int
    window: TimeWindow = OPEN_WINDOW
    service_time_s: int = 0

    def __post_init__(self):
        if self.kind not in (PICKUP, DROPOFF):
            raise ValueError(f"unknown stop kind {self.kind!r}")
        if self.service_time_s < 0:
            raise ValueError("service time must be non-negative")

    @property
    def stop_id(self) -> tuple[int, int]:
        return (self.agent_id, 0 if self.kind == PICKUP else 1)


@dataclass(frozen=True)
class RideTimeBudget:
    direct_time_s: float
    log_base: float

    def __post_init__(self):
        if self.log_base <= 1:
            raise ValueError("log base must be > 1")


def accepted_ride_time(budget: RideTimeBudget) -> float:
    """Maximum in-vehicle seconds: x + log_base(x) with x in minutes.

    For x <= 1 minute the logarithm is clamped at zero.
    """
    x = budget.direct_time_s / 60.0
    if x <= 1.0:
        return float(budget.direct_time_s)
    return (x + math.log(x) / math.log(budget.log_base)) * 60.0


@dataclass(frozen=True)
class Schedule:
    start: GeoPoint
    start_time: int
    stops: tuple[Stop, ...]
    arrival_times: tuple[int, ...]
    departure_times: tuple[int, ...]
    legs: tuple[Route, ...]
    onboard: frozenset = frozenset()
    total_travel_s: int = 0
    total_distance_m: float = 0.0

    @property
    def end_time(self) -> int:
        return self.departure_times[-1] if self.stops else self.start_time

    @property
    def end_location(self) -> GeoPoint:
        return self.stops[-1].location if self.stops else self.start

    @property
    def agents(self) -> list[int]:
        seen = dict.fromkeys(sorted(self.onboard))
        for s in self.stops:
            seen.setdefault(s.agent_id)
        return list(seen)

    def in_vehicle_times(self) -> dict[int, int]:
        board = {a: self.start_time for a in self.onboard}
        out = {}
        for stop, arr in zip(self.stops, self.arrival_times):
            if stop.kind == PICKUP:
                board[stop.agent_id] = arr + stop.service_time_s
            elif stop.agent_id in board:
                out[stop.agent_id] = arr - board[stop.agent_id]
        return out

    def arrival_of(self, agent_id: int, kind: str) -> int | None:
        for stop, arr in zip(self.stops, self.arrival_times):
            if stop.agent_id == agent_id and stop.kind == kind:
                return arr
        return None


@dataclass(frozen=True)
class Infeasible:
    reason: str
    detail: str = ""

    def __bool__(self):
        return False


def check_budgets(schedule: Schedule, budgets: Mapping[int, RideTimeBudget]) -> dict[int, tuple[int, float]]:
    """Agents whose in-vehicle time exceeds their accepted ride time.

    Returns ``{agent_id: (in_vehicle_s, allowed_s)}`` for violators only.
    """
    ivt = schedule.in_vehicle_times()
    missing = sorted(set(budgets) - set(ivt))
    if missing:
        raise ScheduleInconsistency(f"agents with a budget but no completed trip in schedule: {missing}")
    out = {}
    for agent, budget in budgets.items():
        allowed = accepted_ride_time(budget)
        if ivt[agent] > allowed:
            out[agent] = (ivt[agent], allowed)
    return out


@dataclass
class _Label:
    cost: int            # arrival offset at the last stop, relative to start departure
    lo: int              # feasible absolute arrival interval at the last stop
    hi: int
    elapsed: tuple       # per agent slot: in-vehicle seconds so far, or None when not aboard
    seq: tuple           # stop indices visited
    ids: tuple = field(default=())   # stop ids of seq, for tie-breaks

    def dominates(self, other: "_Label") -> bool:
        if self.cost > other.cost or self.lo > other.lo or self.hi < other.hi:
            return False
        for a, b in zip(self.elapsed, other.elapsed):
            if a is not None and a > b:
                return False
        return self.cost < other.cost or self.ids < other.ids


def solve_schedule(
    start: GeoPoint,
    stops,
    budgets: Mapping[int, RideTimeBudget] | None,
    router,
    *,
    start_time: int | None = None,
    start_window: TimeWindow | None = None,
    onboard=(),
    capacity: int | None = None,
) -> Schedule | Infeasible:
    """Find the feasible stop order with the shortest total travel time.

    Args:
        start: vehicle position at departure.
        stops: stops to visit, each once.
        budgets: accepted ride time per agent; agents without an entry are
            unconstrained.
        router: object with ``route(a, b) -> Route``.
        start_time: fixed departure time.  When omitted the latest feasible
            departure inside ``start_window`` is chosen.
        onboard: agents already aboard at ``start``.
        capacity: optional seat limit on simultaneous occupants.

    Returns:
        The optimal :class:`Schedule` (ties broken by the lexicographically
        smallest stop-id sequence) or an :class:`Infeasible` naming the
        constraint class that blocked the deepest partial ordering.
    """
    stops = tuple(stops)
    budgets = budgets or {}
    onboard = frozenset(onboard)
    n = len(stops)
    if n > MAX_STOPS:
        raise TooManyStopsError(f"{n} stops exceeds the solver bound of {MAX_STOPS}")

    if start_time is not None:
        s_lo = s_hi = int(start_time)
        if start_window is not None and not start_window.contains(start_time):
            return Infeasible("window", "fixed start outside start window")
    else:
        w = start_window or TimeWindow(0, DAY_HORIZON_S)
        s_lo, s_hi = w.earliest, w.latest

    agents = sorted(onboard | {s.agent_id for s in stops})
    slot = {a: i for i, a in enumerate(agents)}
    pickup_of = {}
    dropoff_of = {}
    for i, s in enumerate(stops):
        (pickup_of if s.kind == PICKUP else dropoff_of)[s.agent_id] = i
    for a, j in dropoff_of.items():
        if a not in onboard and a not in pickup_of:
            return Infeasible("precedence", f"dropoff of agent {a} without pickup")
    if capacity is not None and len(onboard) > capacity:
        return Infeasible("capacity", "too many agents aboard at start")

    allowed = [None] * len(agents)
    for a, b in budgets.items():
        if a in slot:
            allowed[slot[a]] = accepted_ride_time(b)

    # position 0 is the start, stop i is position i + 1
    locs = [start] + [s.location for s in stops]
    legs: dict[tuple[int, int], Route] = {}

    def leg(i: int, j: int) -> Route:
        r = legs.get((i, j))
        if r is None:
            r = router.route(locs[i], locs[j])
            legs[(i, j)] = r
        return r

    same_loc = [[locs[i] == locs[j] for j in range(n + 1)] for i in range(n + 1)]
    # direct durations for lookahead pruning; ``slack`` absorbs per-leg rounding
    # so that a multi-leg path is never assumed faster than it can be
    dur = [[0 if same_loc[i][j] else leg(i, j).duration_s for j in range(n + 1)] for i in range(n + 1)]
    slack = n + 1
    latest = [s.window.latest for s in stops]
    drop_pos = [None] * len(agents)
    for a, j in dropoff_of.items():
        drop_pos[slot[a]] = j + 1
    service = [0] + [s.service_time_s for s in stops]
    ids = [s.stop_id for s in stops]
    pick_mask = [0] * n
    for j, s in enumerate(stops):
        if s.kind == DROPOFF and s.agent_id in pickup_of:
            pick_mask[j] = 1 << pickup_of[s.agent_id]

    init_elapsed = tuple(0 if a in onboard else None for a in agents)
    full = (1 << n) - 1
    fail = [-1, "window", ""]

    def note(depth: int, reason: str, detail: str):
        if depth > fail[0]:
            fail[0], fail[1], fail[2] = depth, reason, detail

    if n == 0:
        return Schedule(start, s_hi, (), (), (), (), onboard, 0, 0.0)

    # layer: (mask, last_position) -> labels
    layer: dict[tuple[int, int], list[_Label]] = {(0, 0): [_Label(0, s_lo, s_hi, init_elapsed, (), ())]}
    for depth in range(n):
        nxt: dict[tuple[int, int], list[_Label]] = {}
        for (mask, last), labels in sorted(layer.items()):
            for j in range(n):
                bit = 1 << j
                if mask & bit:
                    continue
                stop = stops[j]
                if pick_mask[j] and not (mask & pick_mask[j]):
                    note(depth, "precedence", "dropoff before pickup")
                    continue
                pos = j + 1
                if same_loc[last][pos]:
                    d = 0
                else:
                    d = (service[last] if last else 0) + leg(last, pos).duration_s
                sslot = slot[stop.agent_id]
                for lab in labels:
                    lo = lab.lo + d
                    hi = lab.hi + d
                    w = stop.window
                    if hi < w.earliest:
                        note(depth, "no-wait", f"arrives before window of stop {stop.stop_id} opens")
                        continue
                    if lo > w.latest:
                        note(depth, "window", f"arrives after window of stop {stop.stop_id} closes")
                        continue
                    lo = max(lo, w.earliest)
                    hi = min(hi, w.latest)
                    cost = lab.cost + d
                    el = [None if e is None else e + d for e in lab.elapsed]
                    if stop.kind == PICKUP:
                        el[sslot] = -stop.service_time_s
                        if capacity is not None and sum(e is not None for e in el) > capacity:
                            note(depth, "capacity", "seat capacity exceeded")
                            continue
                    else:
                        ivt = el[sslot]
                        lim = allowed[sslot]
                        if lim is not None and ivt > lim:
                            note(depth, "budget", f"agent {stop.agent_id} in vehicle {ivt}s > {lim:.0f}s")
                            continue
                        el[sslot] = None
                    if not _lookahead_ok(mask | bit, pos, lo, el, n, dur[pos], latest, slack, allowed, drop_pos,
                                         depth, note):
                        continue
                    new = _Label(cost, lo, hi, tuple(el), lab.seq + (j,), lab.ids + (ids[j],))
                    _insert(nxt.setdefault((mask | bit, pos), []), new)
        if not nxt:
            return Infeasible(fail[1], fail[2])
        layer = nxt

    best = None
    for (mask, _), labels in layer.items():
        if mask != full:
            continue
        for lab in labels:
            if best is None or (lab.cost, lab.ids) < (best.cost, best.ids):
                best = lab
    if best is None:
        return Infeasible(fail[1], fail[2])
    return _materialize(start, stops, best, onboard, leg, same_loc, service)


def _lookahead_ok(mask, pos, lo, el, n, dur_row, latest, slack, allowed, drop_pos, depth, note) -> bool:
    """False when some unvisited window or aboard agent's budget is already out of reach."""
    for k in range(n):
        if not mask & (1 << k) and lo + dur_row[k + 1] - slack > latest[k]:
            note(depth, "window", f"stop {k} can no longer be reached in time")
            return False
    for s, e in enumerate(el):
        if e is None or allowed[s] is None or drop_pos[s] is None:
            continue
        if e + dur_row[drop_pos[s]] - slack > allowed[s]:
            note(depth, "budget", "an aboard agent can no longer meet their ride-time budget")
            return False
    return True


def _insert(labels: list[_Label], new: _Label) -> None:
    for lab in labels:
        if lab.dominates(new):
            return
    labels[:] = [lab for lab in labels if not new.dominates(lab)]
    labels.append(new)


def _materialize(start, stops, lab: _Label, onboard, leg, same_loc, service) -> Schedule:
    s = lab.hi - lab.cost
    arrivals = []
    routes = []
    t = s
    last = 0
    distance = 0.0
    for j in lab.seq:
        pos = j + 1
        if same_loc[last][pos]:
            r = Route(stops[j].location, stops[j].location, 0.0, 0, (stops[j].location,))
        else:
            r = leg(last, pos)
            t += (service[last] if last else 0) + r.duration_s
        distance += r.distance_m
        arrivals.append(t)
        routes.append(r)
        last = pos
    ordered = tuple(stops[j] for j in lab.seq)
    departures = []
    for k, stop in enumerate(ordered):
        nxt_same = k + 1 < len(ordered) and ordered[k + 1].location == stop.location
        departures.append(arrivals[k] if nxt_same else arrivals[k] + stop.service_time_s)
    return Schedule(start, s, ordered, tuple(arrivals), tuple(departures), tuple(routes),
                    onboard, arrivals[-1] - s, distance)
