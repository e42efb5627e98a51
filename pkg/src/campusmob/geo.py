"""Deterministic, traffic-free routing and spherical geometry.

Two interchangeable routing backends are provided:

* :class:`BeelineRouter` - great-circle distance times a detour factor,
  driven at a constant speed.
* :class:`GraphRouter` - Dijkstra on a :class:`RoadGraph` loaded from the
  line-oriented graph format (see :func:`load_graph`).

Both expose ``route(a, b) -> Route`` and are immutable after construction,
so they can be shared by concurrent sweep workers.  Route durations are
integer seconds.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class Route:
    origin: GeoPoint
    destination: GeoPoint
    distance_m: float
    duration_s: int
    waypoints: tuple[GeoPoint, ...] = ()


class RoutingError(Exception):
    pass


class UnreachableError(RoutingError):
    pass


class GraphFormatError(ValueError):
    pass


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6 371 km."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Initial bearing from ``a`` to ``b``, clockwise from true north, in [0, 360)."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlon = math.radians(b.lon - a.lon)
    x = math.sin(dlon) * math.cos(lat2)
    y = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    brg = math.degrees(math.atan2(x, y)) % 360.0
    # -0.0 % 360 and tiny negatives round up to exactly 360.0
    return 0.0 if brg >= 360.0 else brg


def destination_point(origin: GeoPoint, bearing: float, distance_m: float) -> GeoPoint:
    """Point reached travelling ``distance_m`` from ``origin`` along an initial bearing."""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing)
    lat1 = math.radians(origin.lat)
    lon1 = math.radians(origin.lon)
    lat2 = math.asin(math.sin(lat1) * math.cos(delta) + math.cos(lat1) * math.sin(delta) * math.cos(theta))
    lon2 = lon1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(lat1),
        math.cos(delta) - math.sin(lat1) * math.sin(lat2),
    )
    lon2 = (math.degrees(lon2) + 540.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(lat2), lon2)


def centroid(points) -> GeoPoint:
    """Spherical centroid (normalized mean of unit vectors)."""
    pts = list(points)
    if not pts:
        raise ValueError("centroid of empty point set")
    v = _unit_vectors(pts).sum(axis=0)
    v /= np.linalg.norm(v)
    return GeoPoint(math.degrees(math.asin(v[2])), math.degrees(math.atan2(v[1], v[0])))


def walking_distance(a: GeoPoint, b: GeoPoint, detour_factor: float = 1.0) -> float:
    """Beeline walking distance in meters (great-circle times ``detour_factor``)."""
    return haversine_m(a, b) * detour_factor


def bearing_segment(center: GeoPoint, point: GeoPoint, n_segments: int) -> int:
    """Index of the circle segment around ``center`` that contains ``point``.

    Segment 0 starts at true north and indices increase clockwise, each
    spanning ``360 / n_segments`` degrees.  ``point == center`` maps to 0.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if point == center:
        return 0
    k = int(bearing_deg(center, point) // (360.0 / n_segments))
    return min(k, n_segments - 1)


def _unit_vectors(points) -> np.ndarray:
    lat = np.radians([p.lat for p in points])
    lon = np.radians([p.lon for p in points])
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


@dataclass(frozen=True)
class BoundingBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lat <= p.lat <= self.max_lat and self.min_lon <= p.lon <= self.max_lon


class BeelineRouter:
    """Great-circle distance times a detour factor at constant speed."""

    name = "beeline"

    def __init__(self, speed_mps: float = 50 / 3.6, detour_factor: float = 1.3, bbox: BoundingBox | None = None):
        if speed_mps <= 0:
            raise ValueError("speed must be positive")
        if detour_factor < 1.0:
            raise ValueError("detour factor must be >= 1")
        self.speed_mps = speed_mps
        self.detour_factor = detour_factor
        self.bbox = bbox
        self._route = lru_cache(maxsize=1 << 20)(self._compute)

    def route(self, a: GeoPoint, b: GeoPoint) -> Route:
        return self._route(a, b)

    def _compute(self, a: GeoPoint, b: GeoPoint) -> Route:
        _check_bbox(self.bbox, a, b)
        if a == b:
            return Route(a, b, 0.0, 0, (a,))
        dist = haversine_m(a, b) * self.detour_factor
        return Route(a, b, dist, int(round(dist / self.speed_mps)), (a, b))


def _check_bbox(bbox, a, b):
    if bbox is not None and not (bbox.contains(a) and bbox.contains(b)):
        raise RoutingError(f"point outside service bounding box: {a} / {b}")


@dataclass
class RoadGraph:
    node_ids: list[str]
    coords: list[GeoPoint]
    # adjacency: node index -> list of (neighbour index, length_m, duration_s float)
    adjacency: list[list[tuple[int, float, float]]]
    rejected: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}
        self._tree = cKDTree(_unit_vectors(self.coords)) if self.coords else None

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency)

    def index_of(self, node_id: str) -> int:
        return self._index[node_id]

    def nearest_node(self, p: GeoPoint) -> int:
        _, idx = self._tree.query(_unit_vectors([p])[0])
        return int(idx)


def load_graph(path) -> RoadGraph:
    """Read a road graph from the ``N``/``E`` line format.

    ``N <id> <lat> <lon>`` declares a node, ``E <from> <to> <length_m> <speed_kmh>``
    a directed edge; ``#`` starts a comment.  Nodes outside the largest
    strongly connected component are dropped and listed in ``graph.rejected``.
    """
    nodes: dict[str, GeoPoint] = {}
    order: list[str] = []
    edges: list[tuple[str, str, float, float, int]] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "N" and len(parts) == 4:
                if parts[1] in nodes:
                    raise GraphFormatError(f"line {lineno}: duplicate node {parts[1]}")
                nodes[parts[1]] = GeoPoint(float(parts[2]), float(parts[3]))
                order.append(parts[1])
            elif parts[0] == "E" and len(parts) == 5:
                edges.append((parts[1], parts[2], float(parts[3]), float(parts[4]), lineno))
            else:
                raise GraphFormatError(f"line {lineno}: cannot parse {raw!r}")
        except ValueError as exc:
            if isinstance(exc, GraphFormatError):
                raise
            raise GraphFormatError(f"line {lineno}: {exc}") from exc
    if not nodes:
        raise GraphFormatError("empty graph")

    index = {nid: i for i, nid in enumerate(order)}
    for u, v, length, speed, lineno in edges:
        for end in (u, v):
            if end not in index:
                raise GraphFormatError(f"line {lineno}: edge {u}->{v} references missing node {end}")
        if length <= 0 or speed <= 0:
            raise GraphFormatError(f"line {lineno}: edge {u}->{v} needs positive length and speed")

    n = len(order)
    rows = [index[u] for u, *_ in edges]
    cols = [index[v] for _, v, *_ in edges]
    mat = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(mat, directed=True, connection="strong")
    sizes = np.bincount(labels)
    # lowest label among the largest components keeps the choice deterministic
    keep_label = int(np.argmax(sizes))
    keep = [i for i in range(n) if labels[i] == keep_label]
    rejected = [order[i] for i in range(n) if labels[i] != keep_label]
    if rejected:
        logger.warning("dropping %d node(s) outside the largest strongly connected component: %s",
                       len(rejected), ", ".join(rejected))
    remap = {old: new for new, old in enumerate(keep)}
    adjacency: list[list[tuple[int, float, float]]] = [[] for _ in keep]
    for u, v, length, speed, _ in edges:
        iu, iv = index[u], index[v]
        if iu in remap and iv in remap:
            adjacency[remap[iu]].append((remap[iv], length, length / (speed / 3.6)))
    return RoadGraph([order[i] for i in keep], [nodes[order[i]] for i in keep], adjacency, rejected)


class GraphRouter:
    """Minimum-duration paths on a road graph.

    Points are snapped to their nearest graph node; snapping legs are not
    charged.  Equal-duration paths are resolved by the lexicographically
    smallest node-id sequence.
    """

    name = "graph"

    def __init__(self, graph: RoadGraph, bbox: BoundingBox | None = None):
        self.graph = graph
        self.bbox = bbox
        self._route = lru_cache(maxsize=1 << 20)(self._compute)
        self._tree_cache = lru_cache(maxsize=4096)(self._dijkstra)

    def route(self, a: GeoPoint, b: GeoPoint) -> Route:
        return self._route(a, b)

    def _compute(self, a: GeoPoint, b: GeoPoint) -> Route:
        _check_bbox(self.bbox, a, b)
        if a == b:
            return Route(a, b, 0.0, 0, (a,))
        src = self.graph.nearest_node(a)
        dst = self.graph.nearest_node(b)
        best = self._tree_cache(src)
        if dst not in best:
            raise UnreachableError(f"no path from {self.graph.node_ids[src]} to {self.graph.node_ids[dst]}")
        duration, path, length = best[dst]
        waypoints = tuple(self.graph.coords[i] for i in path)
        return Route(a, b, length, int(round(duration)), waypoints)

    def _dijkstra(self, src: int) -> dict[int, tuple[float, tuple[int, ...], float]]:
        ids = self.graph.node_ids
        # heap key: (duration, node-id path) gives the lexicographic tie-break
        heap = [(0.0, (ids[src],), (src,), 0.0)]
        done: dict[int, tuple[float, tuple[int, ...], float]] = {}
        while heap:
            dur, _, path, length = heapq.heappop(heap)
            u = path[-1]
            if u in done:
                continue
            done[u] = (dur, path, length)
            for v, edge_len, edge_dur in self.graph.adjacency[u]:
                if v not in done:
                    heapq.heappush(heap, (dur + edge_dur, tuple(ids[i] for i in path) + (ids[v],),
                                          path + (v,), length + edge_len))
        return done


def make_router(backend: str, *, speed_kmh: float = 50.0, detour_factor: float = 1.3,
                graph_file: str | None = None, bbox: BoundingBox | None = None):
    if backend == "beeline":
        return BeelineRouter(speed_kmh / 3.6, detour_factor, bbox)
    if backend == "graph":
        if not graph_file:
            raise ValueError("graph backend requires a graph file")
        return GraphRouter(load_graph(graph_file), bbox)
    raise ValueError(f"unknown routing backend {backend!r}")
