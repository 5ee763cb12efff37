"""Road network model: loading, shortest-path routing, route enumeration,
and the route/location incidence matrix.

The network document is plain JSON (see `load_network`). Counting locations
are directional measurement points tied to one edge each; a route "hits" a
location when its edge sequence traverses that edge.
"""
from __future__ import annotations

import heapq
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

APPROACHES = ("EB", "NB", "SB", "WB")
MOVEMENTS = ("total", "left", "right")

EdgeId = Union[int, str]


class NetworkError(ValueError):
    """Malformed network document or inconsistent reference."""


@dataclass(frozen=True)
class Edge:
    id: EdgeId
    from_node: Union[int, str]
    to_node: Union[int, str]
    length_m: float
    fringe: bool = False
    endpoint: bool = False


@dataclass(frozen=True)
class CountingLocation:
    """One directional, per-movement count point at an intersection approach.

    `id` doubles as the location's column index in the incidence matrix; the
    ordering of the network's location list is part of the data contract.
    """
    id: int
    intersection_id: int
    approach: str
    movement: str
    edge_id: EdgeId


@dataclass(frozen=True)
class Route:
    id: int
    edge_sequence: tuple
    origin_edge: EdgeId
    dest_edge: EdgeId
    fringe: bool


@dataclass
class RoadNetwork:
    nodes: set
    edges: dict  # edge id -> Edge
    counting_locations: list = field(default_factory=list)

    def __post_init__(self):
        # adjacency over edges: node -> outgoing edge ids, in sorted id order
        out: dict = {}
        for e in self.edges.values():
            out.setdefault(e.from_node, []).append(e.id)
        for ids in out.values():
            ids.sort()
        self._outgoing = out

    def outgoing(self, node) -> list:
        return self._outgoing.get(node, [])

    def fringe_edges(self) -> list:
        return sorted(e.id for e in self.edges.values() if e.fringe)

    def endpoint_edges(self) -> list:
        """Candidate route endpoints: fringe edges plus explicitly flagged
        interior demand endpoints."""
        return sorted(e.id for e in self.edges.values() if e.fringe or e.endpoint)

    def location_for(self, intersection_id: int, approach: str,
                     movement: str = "total") -> CountingLocation:
        for loc in self.counting_locations:
            if (loc.intersection_id, loc.approach, loc.movement) == (
                    intersection_id, approach, movement):
                return loc
        raise NetworkError(
            f"no counting location ({intersection_id}, {approach}, {movement})")

    def intersections(self) -> dict:
        """Intersection id -> list of its counting locations, in location order."""
        table: dict = {}
        for loc in self.counting_locations:
            table.setdefault(loc.intersection_id, []).append(loc)
        return table


@dataclass
class IncidenceMatrix:
    """Binary route-by-location usage matrix.

    entries[i, j] == 1 iff route i's edge sequence contains location j's edge.
    """
    entries: np.ndarray  # shape (n_routes, n_locations), dtype uint8
    zero_columns: list   # location indices no route can influence

    @property
    def n_routes(self) -> int:
        return self.entries.shape[0]

    @property
    def n_locations(self) -> int:
        return self.entries.shape[1]

    def location_counts(self, usage: np.ndarray) -> np.ndarray:
        """Per-location traversal totals for a route-usage vector."""
        return self.entries.T.astype(np.float64) @ np.asarray(usage, dtype=np.float64)


def load_network(doc) -> RoadNetwork:
    """Build a RoadNetwork from a document.

    Accepts a parsed dict, a JSON string, or a path to a JSON file with the
    schema::

        {nodes: [{id}], edges: [{id, from, to, length_m, fringe, endpoint?}],
         locations: [{id, intersection, approach, movement, edge}]}
    """
    if isinstance(doc, (str, Path)):
        p = Path(doc)
        if p.exists():
            doc = json.loads(p.read_text())
        else:
            doc = json.loads(doc)
    if not isinstance(doc, dict):
        raise NetworkError("network document must be a JSON object")
    for key in ("nodes", "edges"):
        if key not in doc:
            raise NetworkError(f"network document missing '{key}'")

    nodes = set()
    for item in doc["nodes"]:
        if "id" not in item:
            raise NetworkError("node without id")
        nodes.add(item["id"])

    edges: dict = {}
    for item in doc["edges"]:
        try:
            edge = Edge(
                id=item["id"],
                from_node=item["from"],
                to_node=item["to"],
                length_m=float(item["length_m"]),
                fringe=bool(item.get("fringe", False)),
                endpoint=bool(item.get("endpoint", False)),
            )
        except KeyError as exc:
            raise NetworkError(f"edge missing field {exc}") from None
        if edge.id in edges:
            raise NetworkError(f"duplicate edge id {edge.id!r}")
        if edge.from_node not in nodes:
            raise NetworkError(f"dangling node {edge.from_node!r} in edge {edge.id!r}")
        if edge.to_node not in nodes:
            raise NetworkError(f"dangling node {edge.to_node!r} in edge {edge.id!r}")
        if not edge.length_m > 0:
            raise NetworkError(f"nonpositive length on edge {edge.id!r}")
        edges[edge.id] = edge

    locations: list = []
    seen_triples = set()
    for idx, item in enumerate(doc.get("locations", [])):
        try:
            loc = CountingLocation(
                id=int(item["id"]),
                intersection_id=int(item["intersection"]),
                approach=str(item["approach"]),
                movement=str(item.get("movement", "total")),
                edge_id=item["edge"],
            )
        except KeyError as exc:
            raise NetworkError(f"location missing field {exc}") from None
        if loc.id != idx:
            raise NetworkError(
                f"location id {loc.id} does not match its list position {idx}")
        if loc.approach not in APPROACHES:
            raise NetworkError(f"unknown approach {loc.approach!r}")
        if loc.movement not in MOVEMENTS:
            raise NetworkError(f"unknown movement {loc.movement!r}")
        if loc.edge_id not in edges:
            raise NetworkError(f"location {loc.id} references unknown edge {loc.edge_id!r}")
        triple = (loc.intersection_id, loc.approach, loc.movement)
        if triple in seen_triples:
            raise NetworkError(f"duplicate counting location {triple}")
        seen_triples.add(triple)
        locations.append(loc)

    return RoadNetwork(nodes=nodes, edges=edges, counting_locations=locations)


def _dijkstra_from(net: RoadNetwork, origin_edge: EdgeId) -> dict:
    """Settle minimum-length paths from `origin_edge` to every reachable edge.

    Paths start with the origin edge itself. Length ties are broken by the
    lexicographically smallest edge-id sequence; heap keys carry the sequence
    so the first settle of an edge is both length- and lex-minimal.
    """
    origin = net.edges[origin_edge]
    settled: dict = {}
    heap = [(origin.length_m, (origin_edge,))]
    while heap:
        cost, seq = heapq.heappop(heap)
        tail = seq[-1]
        if tail in settled:
            continue
        settled[tail] = (cost, seq)
        for nxt in net.outgoing(net.edges[tail].to_node):
            if nxt not in settled:
                heapq.heappush(heap, (cost + net.edges[nxt].length_m, seq + (nxt,)))
    return settled


def shortest_path(net: RoadNetwork, origin_edge: EdgeId,
                  dest_edge: EdgeId) -> Optional[Route]:
    """Length-minimal directed path from `origin_edge` to `dest_edge`,
    inclusive of both; None if unreachable."""
    for eid in (origin_edge, dest_edge):
        if eid not in net.edges:
            raise NetworkError(f"unknown edge id {eid!r}")
    settled = _dijkstra_from(net, origin_edge)
    if dest_edge not in settled:
        return None
    _, seq = settled[dest_edge]
    return _make_route(net, 0, seq)


def _make_route(net: RoadNetwork, route_id: int, seq: tuple) -> Route:
    origin, dest = seq[0], seq[-1]
    fringe = net.edges[origin].fringe and net.edges[dest].fringe
    return Route(id=route_id, edge_sequence=tuple(seq),
                 origin_edge=origin, dest_edge=dest, fringe=fringe)


def enumerate_routes(net: RoadNetwork) -> list:
    """One shortest route per ordered pair of distinct endpoint edges.

    Route ids are assigned in (origin, destination) lexicographic order over
    edge ids; unreachable pairs are skipped. Deterministic for a given
    document.
    """
    endpoints = net.endpoint_edges()
    routes: list = []
    for origin in endpoints:
        settled = _dijkstra_from(net, origin)
        for dest in endpoints:
            if dest == origin:
                continue
            hit = settled.get(dest)
            if hit is None:
                continue
            routes.append(_make_route(net, len(routes), hit[1]))
    return routes


def build_incidence(routes: Sequence[Route],
                    locations: Sequence[CountingLocation]) -> IncidenceMatrix:
    """Binary usage matrix over (route, counting location) pairs.

    All-zero columns (locations no enumerated route passes) are collected in
    `zero_columns` so callers can report unconstrainable locations.
    """
    n, m = len(routes), len(locations)
    entries = np.zeros((n, m), dtype=np.uint8)
    for j, loc in enumerate(locations):
        for i, route in enumerate(routes):
            if loc.edge_id in route.edge_sequence:
                entries[i, j] = 1
    zero_columns = [j for j in range(m) if not entries[:, j].any()]
    return IncidenceMatrix(entries=entries, zero_columns=zero_columns)


def incidence_to_csv(matrix: IncidenceMatrix,
                     locations: Sequence[CountingLocation]) -> str:
    """CSV export: header row of location ids, one row per route."""
    buf = io.StringIO()
    buf.write(",".join(str(loc.id) for loc in locations) + "\n")
    for row in matrix.entries:
        buf.write(",".join(str(int(v)) for v in row) + "\n")
    return buf.getvalue()
