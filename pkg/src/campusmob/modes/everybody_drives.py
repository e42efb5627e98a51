"""Baseline: everyone drives their own car, arriving exactly at T_A."""

from __future__ import annotations

import logging

from ..core import HOMEBOUND, TO_CAMPUS, MobilityMode, Rules, solo_ride
from ..geo import RoutingError

logger = logging.getLogger(__name__)


class EverybodyDrives(MobilityMode):
    name = "everybodydrives"
    log_base = None

    def prepare_mode(self, agents) -> None:
        super().prepare_mode(agents)
        self.excluded: dict[int, str] = {}

    def start_mode(self) -> None:
        rides = []
        for agent in sorted(self.agents, key=lambda a: a.id):
            try:
                there = self.router.route(agent.home, agent.campus_position)
                back = self.router.route(agent.campus_position, agent.home)
            except RoutingError as exc:
                self.excluded[agent.id] = str(exc)
                logger.warning("agent %d excluded: %s", agent.id, exc)
                continue
            rides.append(solo_ride(len(rides), self.name, agent, TO_CAMPUS, there,
                                   agent.request.arrival_s - there.duration_s, None))
            rides.append(solo_ride(len(rides), self.name, agent, HOMEBOUND, back, agent.request.departure_s, None))
        self.rides = rides

    def rules(self) -> Rules:
        return Rules(walking_detour_factor=self.cfg.walking_detour_factor, excluded=frozenset(self.excluded))

    def extras(self):
        from ..metrics import ModeExtras
        return ModeExtras(driving_agents=len(self.agents) - len(self.excluded))
