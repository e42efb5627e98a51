import numpy as np
import pytest

from campusmob.core import HOMEBOUND, TO_CAMPUS, EventKind, EventQueue, execute_mode
from campusmob.geo import BeelineRouter, bearing_deg, destination_point, haversine_m
from campusmob.metrics import ride_fuel_cost
from campusmob.modes.ridesharing import DRIVER, PASSENGER, Ridesharing, split_requests

from .conftest import HUBLAND, hand_agents, small_setup

ROUTER = BeelineRouter()
# a neighbourhood 10 km west of the main campus
VILLAGE = destination_point(HUBLAND, 270.0, 10_000.0)


def near(m, bearing=0.0):
    return destination_point(VILLAGE, bearing, m)


class HighRng:
    """Stand-in generator that always returns the upper bound."""

    def integers(self, low, high=None, size=None):
        return high - 1


def mode_with(cfg, agents):
    m = Ridesharing(cfg, ROUTER)
    m.prepare_mode(agents)
    return m, EventQueue()


def drive_in(m, q, agent, now=0):
    m.role[agent.id] = DRIVER
    return m._create(agent, TO_CAMPUS, now, q)


# -- request splitting ------------------------------------------------------------------

def test_departure_submission_range(cfg):
    agents = hand_agents(cfg, [near(0)], departure=16 * 3600)
    rng = np.random.default_rng(0)
    for _ in range(200):
        ev = [e for e in split_requests(agents, rng) if e.kind == EventKind.DEPARTURE_REQUEST][0]
        assert 14 * 3600 <= ev.timestamp <= 15 * 3600 + 1800


def test_two_events_per_agent():
    _, _, agents = small_setup(60)
    assert len(split_requests(agents, np.random.default_rng(1))) == 120


def test_upper_bound_draw(cfg):
    agents = hand_agents(cfg, [near(0)], departure=16 * 3600)
    ev = [e for e in split_requests(agents, HighRng()) if e.kind == EventKind.DEPARTURE_REQUEST][0]
    assert ev.timestamp == 16 * 3600 - 120 * 60


# -- ranking -------------------------------------------------------------------------------

def test_no_open_matches(cfg):
    m, _ = mode_with(cfg, hand_agents(cfg, [near(0)]))
    assert m.rank_matches(m.agents[0], TO_CAMPUS, 0) == []


def test_identical_driver_ranks_first(cfg):
    agents = hand_agents(cfg, [near(2000), near(0), near(0)])
    m, q = mode_with(cfg, agents)
    far, same = drive_in(m, q, agents[0]), drive_in(m, q, agents[1])
    ranked = m.rank_matches(agents[2], TO_CAMPUS, 0)
    assert ranked[0] is same and ranked[1] is far


def test_candidate_cap(cfg):
    agents = hand_agents(cfg, [near(10 * i, 90) for i in range(26)])
    m, q = mode_with(cfg, agents)
    for a in agents[:25]:
        drive_in(m, q, a)
    assert len(m.rank_matches(agents[25], TO_CAMPUS, 0)) == 20


# -- feasibility ---------------------------------------------------------------------------

def test_walk_over_limit_is_infeasible(cfg):
    agents = hand_agents(cfg, [near(0), near(1300)])
    m, q = mode_with(cfg, agents)
    r = m.feasible_join(agents[1], drive_in(m, q, agents[0]), 0)
    assert not r and r.reason == "walking"


def test_colocated_passenger_is_feasible(cfg):
    agents = hand_agents(cfg, [near(0), near(0)])
    m, q = mode_with(cfg, agents)
    assert m.feasible_join(agents[1], drive_in(m, q, agents[0]), 0)


def test_detour_breaking_driver_budget_is_infeasible(cfg):
    # both live halfway between two campuses about 3.9 km apart and study at opposite ends:
    # whoever is dropped second rides far beyond their accepted ride time
    campuses = {c.id: c.position for c in cfg.campuses}
    a, b = campuses["hubland"], campuses["roentgenring"]
    mid = destination_point(a, bearing_deg(a, b), haversine_m(a, b) / 2)
    driver = hand_agents(cfg, [mid])[0]
    other = hand_agents(cfg, [mid, destination_point(mid, 0, 50)], campus="roentgenring")[1]
    m, q = mode_with(cfg, [driver, other])
    r = m.feasible_join(other, drive_in(m, q, driver), 0)
    assert not r and r.reason == "budget"


def test_seat_limit_counts_driver(cfg):
    agents = hand_agents(cfg, [near(0)] * 6)
    m, q = mode_with(cfg, agents)
    match = drive_in(m, q, agents[0])
    for a in agents[1:5]:
        assert m.assign_or_create(a, TO_CAMPUS, 0, q) is match
    assert len(match.agents) == cfg.student_seats
    assert m.assign_or_create(agents[5], TO_CAMPUS, 0, q) is None


# -- assignment ---------------------------------------------------------------------------

def test_shortest_walk_wins(cfg):
    agents = hand_agents(cfg, [near(500, 0), near(300, 180), near(0)])
    m, q = mode_with(cfg, agents)
    drive_in(m, q, agents[0])
    closer = drive_in(m, q, agents[1])
    assert m.assign_or_create(agents[2], TO_CAMPUS, 0, q) is closer


def test_equal_walks_take_lower_id(cfg):
    agents = hand_agents(cfg, [near(300, 0), near(300, 0), near(0)])
    m, q = mode_with(cfg, agents)
    first = drive_in(m, q, agents[0])
    drive_in(m, q, agents[1])
    assert m.assign_or_create(agents[2], TO_CAMPUS, 0, q) is first


def test_no_candidate_makes_a_driver(cfg):
    agents = hand_agents(cfg, [near(0)])
    m, q = mode_with(cfg, agents)
    m.handle_arrival(agents[0], 0, q)
    assert m.role[0] == DRIVER and m.matches[0].driver == 0


def test_driver_drives_home(cfg):
    agents = hand_agents(cfg, [near(0), near(100)])
    m, q = mode_with(cfg, agents)
    m.handle_arrival(agents[0], 0, q)
    m.handle_arrival(agents[1], 1, q)
    assert m.role == {0: DRIVER, 1: PASSENGER}
    m.handle_departure(agents[0], 15 * 3600, q)
    home = [x for x in m.matches.values() if x.direction == HOMEBOUND]
    assert len(home) == 1 and home[0].driver == 0


def test_waitlisted_passenger_picked_up_by_later_driver(cfg):
    agents = hand_agents(cfg, [near(0), near(100)])
    m, q = mode_with(cfg, agents)
    m.handle_arrival(agents[0], 0, q)
    m.handle_arrival(agents[1], 1, q)
    m.handle_departure(agents[1], 14 * 3600, q)
    assert [e.agent_id for e in m.waitlist] == [1]
    m.handle_departure(agents[0], 15 * 3600, q)
    assert m.waitlist == [] and m.matches[1].members == [1]


def test_lost_when_no_driver_goes_home(cfg):
    agents = hand_agents(cfg, [near(0), near(100)])
    m = Ridesharing(cfg, ROUTER)
    # the driver leaves campus long after the passenger's window closes
    late = hand_agents(cfg, [near(0)], departure=20 * 3600)[0]
    execute_mode(m, [late, agents[1]])
    assert m.lost == [1]
    homebound = [r for r in m.rides if r.direction == HOMEBOUND]
    assert all(1 not in r.agents for r in homebound)
    s = m.summary
    assert s.lost == 1 and s.alt.lost == 1
    leg = ROUTER.route(agents[1].campus_position, agents[1].home)
    assert s.total_distance_m - s.alt.total_distance_m == pytest.approx(leg.distance_m)
    assert s.total_fuel_cost_eur - s.alt.total_fuel_cost_eur == pytest.approx(
        ride_fuel_cost(leg.distance_m, agents[1].vehicle) + 10.0)


def test_no_lost_means_identical_variants():
    cfg, _, agents = small_setup(60)
    m = Ridesharing(cfg, ROUTER)
    execute_mode(m, agents[:1])
    assert m.summary.alt is None and m.summary.variant == "all"


# -- whole-day invariants ------------------------------------------------------------------

@pytest.mark.parametrize("sampler", ["annulus", "clusters"])
def test_day_invariants(sampler):
    cfg, _, agents = small_setup(120, 3, sampler)
    m = Ridesharing(cfg, ROUTER)
    execute_mode(m, agents)
    lost = set(m.lost)
    for r in m.rides:
        assert len(r.agents) <= cfg.student_seats
        if r.direction == HOMEBOUND:
            assert not lost & set(r.agents)
    # every agent keeps its role both ways
    for r in m.rides:
        assert m.role[r.driver] == DRIVER
    assert set(m.role) == {a.id for a in agents}
