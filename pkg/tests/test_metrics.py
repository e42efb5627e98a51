import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from campusmob.core import (PRIVATE, TO_CAMPUS, Ride, RideStop, build_agents, execute_mode, shuttle_vehicle,
                            student_vehicle)
from campusmob.geo import BeelineRouter, GeoPoint, Route
from campusmob.metrics import (EmptyLeg, ModeExtras, agent_metrics, ride_co2, ride_fuel_cost, summarize,
                               summary_columns, write_mode_results, write_summaries)
from campusmob.modes import EverybodyDrives, make_mode
from campusmob.schedule import DROPOFF, PICKUP

from .conftest import HUBLAND, small_setup

A, B = GeoPoint(49.70, 9.90), GeoPoint(49.75, 9.95)


def shared_ride(cfg, km=10.0, driver=0, passenger=1):
    car = student_vehicle(cfg, driver)
    stops = (RideStop(A, PICKUP, driver, 0, 0), RideStop(A, PICKUP, passenger, 0, 60),
             RideStop(HUBLAND, DROPOFF, driver, 900, 960), RideStop(HUBLAND, DROPOFF, passenger, 900, 960))
    legs = (Route(A, A, 0.0, 0), Route(A, A, 0.0, 0), Route(A, HUBLAND, km * 1000, 840), Route(HUBLAND, HUBLAND, 0.0, 0))
    return Ride(0, "x", car, driver, TO_CAMPUS, (driver, passenger), 0, 960, A, HUBLAND, stops, legs)


def test_private_car_table_totals(cfg):
    car = student_vehicle(cfg, 0)
    assert ride_co2(120_103.4 * 1000, car) / 1000 == pytest.approx(15_133, abs=1)
    assert ride_fuel_cost(120_103.4 * 1000, car) == pytest.approx(9_909.98, abs=0.05)


def test_zero_distance(cfg):
    assert ride_co2(0.0, student_vehicle(cfg, 0)) == 0.0
    assert ride_fuel_cost(0.0, shuttle_vehicle(cfg, 0)) == 0.0


def test_shuttle_per_litre_emissions(cfg):
    shuttle = shuttle_vehicle(cfg, 0)
    assert ride_co2(1000.0, shuttle) == pytest.approx(98.0, abs=0.01)
    assert round(ride_fuel_cost(100_000.0, shuttle), 2) == 6.53


def test_equal_split(cfg):
    am = agent_metrics([shared_ride(cfg)], [a for a in _agents(cfg, 2)])
    assert am[0].co2_g == pytest.approx(630.0) and am[1].co2_g == pytest.approx(630.0)
    assert am[0].drove == 1 and am[1].drove == 0


def _agents(cfg, n):
    _, _, agents = small_setup(max(n, 2))
    return agents[:n]


def test_empty_summary():
    s = summarize("x", [], [])
    assert s.rides == 0 and s.total_distance_m == 0 and s.avg_occupancy == 0 and s.total_co2_g == 0


def test_empty_legs_count_in_totals(cfg):
    shuttle = shuttle_vehicle(cfg, 0)
    s = summarize("x", [], [], ModeExtras(empty_legs=[EmptyLeg(shuttle, 5000.0, 300)], empty_in_ride_m=1000.0))
    assert s.total_distance_m == 5000.0 and s.empty_distance_m == 6000.0
    assert s.total_co2_g == pytest.approx(ride_co2(5000.0, shuttle))


def test_lost_variants_differ_by_home_legs_and_penalty(cfg):
    _, _, agents = small_setup(10)
    ride = shared_ride(cfg)
    home = dataclasses.replace(shared_ride(cfg, km=7.0, driver=5, passenger=5), agents=(5,), id=-1)
    s = summarize("x", [ride], agents, ModeExtras(lost_agents=[5], lost_home_rides=[home], lost_penalty_eur=10.0))
    assert s.variant == "incl_lost" and s.alt.variant == "excl_lost"
    assert s.total_distance_m - s.alt.total_distance_m == pytest.approx(7000.0)
    assert s.total_fuel_cost_eur - s.alt.total_fuel_cost_eur == pytest.approx(
        ride_fuel_cost(7000.0, home.vehicle) + 10.0)


@pytest.mark.parametrize("mode", ["everybodydrives", "ridesharing", "ridepooling"])
def test_co2_conservation(mode):
    cfg, _, agents = small_setup(60)
    m = make_mode(mode, cfg, BeelineRouter())
    execute_mode(m, agents)
    per_agent = sum(a.co2_g for a in agent_metrics(m.rides, agents).values())
    assert per_agent == pytest.approx(sum(ride_co2(r.distance_m, r.vehicle) for r in m.rides), abs=1e-6)


def test_baseline_identity():
    cfg, _, agents = small_setup(60)
    m = EverybodyDrives(cfg, BeelineRouter())
    execute_mode(m, agents)
    s = m.summary
    assert s.avg_occupancy == 1.0 and s.rides_multi == 0
    assert s.avg_co2_per_ride_g == pytest.approx(s.total_co2_g / (2 * len(agents)))


def test_file_line_counts_and_determinism(cfg, tmp_path):
    agents = _agents(cfg, 2)
    rides = [shared_ride(cfg), dataclasses.replace(shared_ride(cfg), id=1)]
    s = summarize("x", rides, agents)
    write_mode_results(tmp_path / "a", "x", rides, agents, s, "d")
    write_mode_results(tmp_path / "b", "x", rides, agents, s, "d")
    text = (tmp_path / "a" / "x" / "rideResults.csv").read_text()
    assert len(text.splitlines()) == 3
    for name in ("rideResults.csv", "agentResults.csv", "summarizedResults.csv"):
        assert (tmp_path / "a" / "x" / name).read_bytes() == (tmp_path / "b" / "x" / name).read_bytes()
    header = (tmp_path / "a" / "x" / "summarizedResults.csv").read_text().splitlines()[0]
    assert "pct_distance" not in header


def test_combined_summary_rows(cfg, tmp_path):
    s = summarize("x", [shared_ride(cfg)], _agents(cfg, 2))
    path = write_summaries(tmp_path, [s, s, s], "d", with_pct=False)
    lines = path.read_text().splitlines()
    assert len(lines) == 4 and lines[0].split(",") == summary_columns(False)


@settings(max_examples=50)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_emissions_additive(a, b):
    car = student_vehicle_default()
    assert ride_co2(a + b, car) == pytest.approx(ride_co2(a, car) + ride_co2(b, car), rel=1e-9, abs=1e-6)


def student_vehicle_default():
    from campusmob.config import default_config
    v = student_vehicle(default_config(), 0)
    assert v.kind == PRIVATE
    return v
