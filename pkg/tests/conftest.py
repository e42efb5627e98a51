import os
from functools import lru_cache

import pytest

from campusmob.config import default_config
from campusmob.core import build_agents
from campusmob.geo import BeelineRouter, GeoPoint
from campusmob.scenario import generate_scenario

FULL = os.environ.get("CAMPUSMOB_FULL") == "1"

HUBLAND = GeoPoint(49.7794, 9.9733)


def pytest_collection_modifyitems(config, items):
    if FULL:
        return
    skip = pytest.mark.skip(reason="full-scale check; set CAMPUSMOB_FULL=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@lru_cache(maxsize=None)
def small_setup(n_agents=60, seed=7, sampler="annulus", **changes):
    cfg = default_config().replace(n_agents=n_agents, home_sampler=sampler, **changes)
    scenario = generate_scenario(cfg, seed)
    return cfg, scenario, tuple(build_agents(scenario, cfg))


@pytest.fixture
def cfg():
    return default_config()


@pytest.fixture
def router():
    return BeelineRouter()


def hand_agents(cfg, homes, arrival=8 * 3600, departure=16 * 3600, campus="hubland", submission=None):
    """Agents at the given homes sharing one campus and one timetable."""
    from campusmob.scenario import CampusLocation, DemandScenario, ScenarioRow
    positions = {c.id: c.position for c in cfg.campuses}
    sub = arrival - 3600 if submission is None else submission
    rows = tuple(ScenarioRow(i, h, campus, arrival, departure, sub + i, positions[campus])
                 for i, h in enumerate(homes))
    sc = DemandScenario(rows, tuple(CampusLocation(k, v) for k, v in positions.items()))
    return build_agents(sc, cfg)


def pytest_terminal_summary(terminalreporter):
    try:
        from tests.test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        title, ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
