"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line with its measured values; the lines are
printed together at the end of the pytest run.  Criterion 8 and the
full-scale half of criterion 9 need several minutes and run only with
CAMPUSMOB_FULL=1.
"""

import contextlib
import csv
import dataclasses
import time

import numpy as np
import pytest

from campusmob.cli import main, run_modes
from campusmob.config import default_config
from campusmob.core import HOMEBOUND, SHUTTLE, build_agents, check_constraints, execute_mode, student_vehicle
from campusmob.geo import BeelineRouter
from campusmob.metrics import ride_co2, ride_fuel_cost, summarize
from campusmob.modes import EverybodyDrives, Ridepooling, Ridesharing, make_mode
from campusmob.scenario import generate_scenario, read_scenario, write_scenario

from .test_schedule import compare_with_oracle

RESULTS: dict[int, tuple[str, bool, str]] = {}

DESK_AGENTS = 500
DESK_SEED = 2024


@contextlib.contextmanager
def criterion(number: int, title: str, detail: list):
    """Record PASS when the block completes, FAIL with the assertion text otherwise."""
    try:
        yield
    except BaseException as exc:
        RESULTS[number] = (title, False, "; ".join(detail + [str(exc).splitlines()[0] if str(exc) else
                                                             type(exc).__name__]))
        raise
    RESULTS[number] = (title, True, "; ".join(detail))


_cache = {}


def desk(sampler="annulus", **changes):
    """(config, scenario, agents) for the 500-agent desk-scale scenario."""
    key = (sampler, tuple(sorted(changes.items())))
    if key not in _cache:
        cfg = default_config().replace(n_agents=DESK_AGENTS, home_sampler=sampler, **changes)
        sc = generate_scenario(cfg, DESK_SEED)
        _cache[key] = (cfg, sc, build_agents(sc, cfg))
    return _cache[key]


def desk_run(mode_name, sampler="annulus", **changes):
    key = ("run", mode_name, sampler, tuple(sorted(changes.items())))
    if key not in _cache:
        cfg, _, agents = desk(sampler)
        cfg = cfg.replace(**changes) if changes else cfg
        mode = make_mode(mode_name, cfg, BeelineRouter(cfg.driving_speed_kmh / 3.6, cfg.detour_factor))
        execute_mode(mode, agents)
        _cache[key] = mode
    return _cache[key]


# -- 1 ---------------------------------------------------------------------------------------

def test_criterion_1_metric_arithmetic():
    v = student_vehicle(default_config(), 0)
    t0 = time.perf_counter()
    co2_kg = ride_co2(120_103.4 * 1000, v) / 1000
    cost = ride_fuel_cost(120_103.4 * 1000, v)
    dt = time.perf_counter() - t0
    detail = [f"CO2 {co2_kg:.2f} kg (want 15133 +-1)", f"cost {cost:.3f} EUR (want 9909.98 +-0.05)",
              f"{dt * 1000:.3f} ms"]
    with criterion(1, "metric arithmetic identities", detail):
        assert abs(co2_kg - 15_133) <= 1
        assert abs(cost - 9_909.98) <= 0.05
        assert dt < 0.1


# -- 2 ---------------------------------------------------------------------------------------

def test_criterion_2_baseline_structure():
    cfg, _, agents = desk()
    t0 = time.perf_counter()
    mode = EverybodyDrives(cfg, BeelineRouter())
    execute_mode(mode, agents)
    dt = time.perf_counter() - t0
    s = mode.summary
    detail = [f"n={len(agents)}", f"rides {s.rides}", f"occupancy {s.avg_occupancy}", f"multi {s.rides_multi}",
              f"lost {s.lost}", f"empty {s.empty_distance_m} m", f"{dt:.2f} s"]
    with criterion(2, "baseline structure (2n rides, occupancy 1)", detail):
        assert s.rides == 2 * len(agents)
        assert s.avg_occupancy == 1.0
        assert s.rides_multi == 0 and s.lost == 0 and s.empty_distance_m == 0
        assert dt < 10


# -- 3 ---------------------------------------------------------------------------------------

def test_criterion_3_solver_matches_exhaustive_enumeration():
    t0 = time.perf_counter()
    bad = []
    for seed in range(200):
        ok, info = compare_with_oracle(seed)
        if not ok:
            bad.append((seed, info))
    dt = time.perf_counter() - t0
    detail = [f"200 stop sets, {200 - len(bad)} agree", f"{dt:.1f} s including the oracle"]
    with criterion(3, "solver equals exhaustive enumeration", detail):
        assert not bad, bad[:3]
        assert dt < 30


# -- 4 ---------------------------------------------------------------------------------------

def test_criterion_4_constraint_referee():
    cfg, _, agents = desk()
    t0 = time.perf_counter()
    counts = {}
    for name in ("everybodydrives", "ridesharing", "ridepooling"):
        mode = desk_run(name)
        counts[name] = len(check_constraints(mode.rides, mode.agents, mode.router, mode.rules()))
    dt = time.perf_counter() - t0
    # the referee is not vacuous: stretching one pooled ride breaks its window
    pooled = desk_run("ridepooling")
    ride = next(r for r in pooled.rides if r.vehicle.kind == SHUTTLE)
    shifted = dataclasses.replace(ride, stops=tuple(dataclasses.replace(s, arrival_s=s.arrival_s + 7200,
                                                                        departure_s=s.departure_s + 7200)
                                                    for s in ride.stops))
    caught = {v.kind for v in check_constraints([shifted], agents, pooled.router, pooled.rules())}
    detail = [", ".join(f"{k} {v} violations" for k, v in counts.items()), f"{dt:.1f} s"]
    with criterion(4, "constraint referee clean on 500 agents", detail):
        assert all(v == 0 for v in counts.values())
        assert "window" in caught
        assert dt < 120


# -- 5 ---------------------------------------------------------------------------------------

class Probe(Ridepooling):
    """Fails the victim's return leg and snapshots the diaries around that attempt."""

    def __init__(self, cfg, router, victim):
        super().__init__(cfg, router)
        self.victim = victim
        self.fault_injector = lambda agent, direction: agent.id == victim and direction == HOMEBOUND
        self.reached_return = False

    def assign_leg(self, agent, direction, now):
        if agent.id == self.victim and direction == HOMEBOUND:
            self.reached_return = True
        return super().assign_leg(agent, direction, now)

    def process_paired_request(self, agent, now, queue):
        if agent.id != self.victim:
            return super().process_paired_request(agent, now, queue)
        self.before = self.state_fingerprint()
        self.pending_before = len(queue)
        out = super().process_paired_request(agent, now, queue)
        self.after = self.state_fingerprint()
        self.pending_after = len(queue)
        return out


def test_criterion_5_ridepooling_atomicity():
    cfg, _, all_agents = desk()
    agents = all_agents[:80]
    plain = Ridepooling(cfg, BeelineRouter())
    execute_mode(plain, agents)
    pooled = sorted(plain.pooled)
    rng = np.random.default_rng(5)
    victims = [int(v) for v in rng.choice(pooled, size=100)]
    failures = []
    t0 = time.perf_counter()
    for trial, victim in enumerate(victims):
        m = Probe(cfg, BeelineRouter(), victim)
        execute_mode(m, agents)
        solo = [r for r in m.rides if victim in r.agents]
        ok = (m.reached_return and m.before == m.after and m.pending_before == m.pending_after
              and len(solo) == 2 and all(r.vehicle.kind != SHUTTLE and r.agents == (victim,) for r in solo))
        if not ok:
            failures.append(trial)
    dt = time.perf_counter() - t0
    detail = [f"{100 - len(failures)}/100 trials rolled back cleanly with 2 solo rides", f"{dt:.1f} s"]
    with criterion(5, "ridepooling atomicity under injected return-leg failure", detail):
        assert not failures, failures


# -- 6 ---------------------------------------------------------------------------------------

def test_criterion_6_accounting_partitions():
    pool = desk_run("ridepooling")
    shuttle_rides = [r for r in pool.rides if r.vehicle.kind == SHUTTLE]
    in_ride = sum(r.distance_m for r in shuttle_rides)
    idle = sum(pool._idle_distance(r) for r in shuttle_rides)
    depot = sum(e.distance_m for e in pool.empty_legs)
    total = in_ride + depot
    revenue = in_ride - idle
    empty = pool.summary.empty_distance_m

    share = desk_run("ridesharing")
    cfg, _, agents = desk()
    by_id = {a.id: a for a in agents}
    router = BeelineRouter()
    legs = [router.route(by_id[a].campus_position, by_id[a].home) for a in share.lost]
    want_dist = sum(leg.distance_m for leg in legs)
    want_cost = sum(ride_fuel_cost(leg.distance_m, by_id[a].vehicle) for a, leg in zip(share.lost, legs)) \
        + cfg.lost_penalty_eur * len(share.lost)
    s = share.summary
    alt = s.alt or s
    got_dist = s.total_distance_m - alt.total_distance_m
    got_cost = s.total_fuel_cost_eur - alt.total_fuel_cost_eur
    # independent recomputation from the ride list
    check = summarize("ridesharing", share.rides, agents)
    detail = [f"shuttle {total / 1000:.3f} km = revenue {revenue / 1000:.3f} + empty {empty / 1000:.3f}",
              f"lost {len(share.lost)}: +{got_dist / 1000:.3f} km (want {want_dist / 1000:.3f}), "
              f"+{got_cost:.4f} EUR (want {want_cost:.4f})"]
    with criterion(6, "accounting partitions", detail):
        assert total == pytest.approx(revenue + empty, abs=1e-6)
        assert got_dist == pytest.approx(want_dist, abs=1e-6)
        assert got_cost == pytest.approx(want_cost, abs=1e-6)
        assert check.total_distance_m == pytest.approx(alt.total_distance_m, abs=1e-6)
        assert len(share.lost) > 0


# -- 7 ---------------------------------------------------------------------------------------

def test_criterion_7_directional_sensitivity():
    timings = {}

    def sweep(mode, key, values):
        t0 = time.perf_counter()
        out = [desk_run(mode, "clusters", **{key: v}).summary for v in values]
        timings[key] = time.perf_counter() - t0
        return out

    w600, w1200 = sweep("ridesharing", "accepted_walking_distance_m", [600.0, 1200.0])
    f50, f250 = sweep("ridepooling", "fleet_size", [50, 250])
    s2, s6 = sweep("ridepooling", "shuttle_seats", [2, 6])
    detail = [f"walk 600->1200: occupancy {w600.avg_occupancy:.3f}->{w1200.avg_occupancy:.3f}, "
              f"lost {w600.lost}->{w1200.lost}",
              f"fleet 50->250: private drivers {f50.driving_agents}->{f250.driving_agents}",
              f"seats 2->6: occupancy {s2.avg_occupancy:.3f}->{s6.avg_occupancy:.3f}",
              "sweeps " + ", ".join(f"{t:.0f} s" for t in timings.values())]
    with criterion(7, "directional sensitivity (500 clustered agents)", detail):
        assert w1200.avg_occupancy >= w600.avg_occupancy and w1200.lost <= w600.lost
        assert f250.driving_agents <= f50.driving_agents
        assert s6.avg_occupancy >= s2.avg_occupancy
        assert all(t < 300 for t in timings.values())


# -- 8 and 9 ---------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("full")
    sc = d / "scenario.csv"
    assert main(["generate", "--seed", "1", "--out", str(sc)]) == 0
    t0 = time.perf_counter()
    assert main(["run", "--scenario", str(sc), "--out", str(d / "a")]) == 0
    return d, sc, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_8_full_scale_magnitudes(full_run):
    d, sc, dt = full_run
    with open(d / "a" / "summarizedResults.csv", newline="") as fh:
        rows = {r["mode"]: r for r in csv.DictReader(fh)}
    n = len(read_scenario(sc).rows)
    share = float(rows["ridesharing"]["pct_distance"])
    pool = float(rows["ridepooling"]["pct_distance"])
    lost = int(rows["ridesharing"]["lost"]) / n
    detail = [f"n={n}", f"baseline rides {rows['everybodydrives']['rides']}",
              f"ridesharing {share:.2f}% of baseline distance (want < 75)",
              f"ridepooling {pool:.2f}% (want 90-115)", f"lost share {lost * 100:.1f}% (want 5-15)",
              f"{dt / 60:.1f} min"]
    with criterion(8, "full-scale magnitudes", detail):
        assert int(rows["everybodydrives"]["rides"]) == 2 * n
        assert share < 75
        assert 90 <= pool <= 115
        assert 0.05 <= lost <= 0.15
        assert dt < 15 * 60


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism_desk(tmp_path):
    _, sc, _ = desk()
    path = tmp_path / "sc.csv"
    write_scenario(sc, path)
    for out in ("a", "b"):
        assert main(["run", "--scenario", str(path), "--out", str(tmp_path / out)]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    diff = [str(k) for k in a if a[k] != b.get(k)]
    detail = [f"desk scale: {len(a)} files compared, {len(diff)} differ"]
    with criterion(9, "byte-identical reruns", detail):
        assert a.keys() == b.keys() and not diff


@pytest.mark.slow
def test_criterion_9_determinism_full(full_run):
    d, sc, _ = full_run
    assert main(["run", "--scenario", str(sc), "--out", str(d / "b")]) == 0
    a, b = _tree(d / "a"), _tree(d / "b")
    diff = [str(k) for k in a if a[k] != b.get(k)]
    prev = RESULTS.get(9, ("", True, ""))
    detail = [x for x in (prev[2], f"full scale: {len(a)} files compared, {len(diff)} differ") if x]
    with criterion(9, "byte-identical reruns", detail):
        assert prev[1]
        assert a.keys() == b.keys() and not diff


def test_run_modes_share_agents():
    # every mode sees the same agent list
    cfg, sc, _ = desk()
    res = run_modes(cfg.replace(n_agents=DESK_AGENTS), sc, ["everybodydrives", "ridesharing"])
    a, b = (m.agents for m, _ in res.values())
    assert a == b
    assert isinstance(res["ridesharing"][0], Ridesharing)
