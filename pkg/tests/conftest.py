"""Shared fixtures: synthetic road networks and count profiles.

Two families: square grid networks with boundary entry/exit stubs (route
enumeration, demand recovery, scaling), and a hand-built two-intersection
network whose center intersection is turn-expanded so that dedicated
left/right-turn counting locations exist (feedback refinement tests).
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from demandforge import netgraph
from demandforge.counts import SEGMENTS_PER_DAY, CountTable, SourceKind


def make_grid_doc(size: int, stubs: str = "single",
                  location_edges=None) -> dict:
    """Square road grid document with fringe stubs on the boundary roads.

    `stubs="single"`: each of the 2*size roads gets one entry stub at its
    low end and one exit stub at its high end (a 3x3 grid then has 12 fringe
    and 24 interior edges). `stubs="both"`: every road end gets both an
    entry and an exit stub, quadrupling the endpoint count for scaling
    fixtures.
    """
    nodes = [{"id": f"n{x}_{y}"} for x in range(size) for y in range(size)]
    edges = []

    def interior(a, b):
        edges.append({"id": f"{a}>{b}", "from": a, "to": b,
                      "length_m": 100.0, "fringe": False})

    for x in range(size):
        for y in range(size):
            if x + 1 < size:
                interior(f"n{x}_{y}", f"n{x + 1}_{y}")
                interior(f"n{x + 1}_{y}", f"n{x}_{y}")
            if y + 1 < size:
                interior(f"n{x}_{y}", f"n{x}_{y + 1}")
                interior(f"n{x}_{y + 1}", f"n{x}_{y}")

    stub_id = 0

    def stub(kind, node):
        nonlocal stub_id
        outside = f"v{stub_id}"
        nodes.append({"id": outside})
        if kind == "in":
            edges.append({"id": f"in{stub_id:03d}", "from": outside, "to": node,
                          "length_m": 50.0, "fringe": True})
        else:
            edges.append({"id": f"out{stub_id:03d}", "from": node, "to": outside,
                          "length_m": 50.0, "fringe": True})
        stub_id += 1

    for x in range(size):          # vertical roads: column x
        low, high = f"n{x}_0", f"n{x}_{size - 1}"
        stub("in", low)
        stub("out", high)
        if stubs == "both":
            stub("in", high)
            stub("out", low)
    for y in range(size):          # horizontal roads: row y
        low, high = f"n0_{y}", f"n{size - 1}_{y}"
        stub("in", low)
        stub("out", high)
        if stubs == "both":
            stub("in", high)
            stub("out", low)

    locations = []
    if location_edges:
        for idx, (edge_id, intersection, approach, movement) in enumerate(location_edges):
            locations.append({"id": idx, "intersection": intersection,
                              "approach": approach, "movement": movement,
                              "edge": edge_id})
    return {"nodes": nodes, "edges": edges, "locations": locations}


def grid3_location_edges():
    """Ten counting locations on the 3x3 grid: the four center approaches
    plus every entry stub."""
    center = [
        ("n0_1>n1_1", 5, "EB", "total"),
        ("n1_0>n1_1", 5, "NB", "total"),
        ("n1_2>n1_1", 5, "SB", "total"),
        ("n2_1>n1_1", 5, "WB", "total"),
    ]
    # entry stubs in creation order: columns 0..2 then rows 0..2
    stubs = [("in000", 0, "NB", "total"), ("in002", 1, "NB", "total"),
             ("in004", 2, "NB", "total"), ("in006", 0, "EB", "total"),
             ("in008", 1, "EB", "total"), ("in010", 2, "EB", "total")]
    return center + stubs


@pytest.fixture(scope="session")
def grid3():
    doc = make_grid_doc(3, location_edges=grid3_location_edges())
    return netgraph.load_network(doc)


@pytest.fixture(scope="session")
def grid3_routes(grid3):
    return netgraph.enumerate_routes(grid3)


@pytest.fixture(scope="session")
def grid3_incidence(grid3, grid3_routes):
    return netgraph.build_incidence(grid3_routes, grid3.counting_locations)


# --- turn-expanded fixture network for the refinement tests ----------------

_ARM_TO_APPROACH = {"W": "EB", "E": "WB", "N": "SB", "S": "NB"}
_EXIT_DIR = {
    "EB": {"left": "N", "through": "E", "right": "S"},
    "WB": {"left": "S", "through": "W", "right": "N"},
    "NB": {"left": "W", "through": "N", "right": "E"},
    "SB": {"left": "E", "through": "S", "right": "W"},
}

# Peak (busiest-segment) counts per location of the two fixture
# intersections; turn peaks stay below their approach totals so an exact
# per-approach decomposition always exists.
PEAK_COUNTS = {
    (25, "EB", "total"): 119, (25, "NB", "total"): 157,
    (25, "SB", "total"): 281, (25, "WB", "total"): 334,
    (25, "EB", "left"): 7, (25, "EB", "right"): 43,
    (25, "NB", "left"): 20, (25, "NB", "right"): 108,
    (25, "SB", "left"): 141, (25, "SB", "right"): 17,
    (25, "WB", "left"): 178, (25, "WB", "right"): 138,
    (46, "EB", "total"): 50, (46, "WB", "total"): 47,
}
PEAK_SEGMENT = 68  # 17:00


def make_two_intersection_doc() -> dict:
    nodes, edges = [], []

    def node(nid):
        nodes.append({"id": nid})

    def edge(eid, a, b, length, fringe=False):
        edges.append({"id": eid, "from": a, "to": b, "length_m": length,
                      "fringe": fringe})

    for arm, approach in _ARM_TO_APPROACH.items():
        node(f"oin_{arm}")
        node(f"a_{arm}")
        node(f"p_{approach}")
        edge(f"in_{arm}", f"oin_{arm}", f"a_{arm}", 50.0, fringe=True)
        edge(f"ap_{approach}", f"a_{arm}", f"p_{approach}", 100.0)
    for exit_dir in "NESW":
        node(f"q_{exit_dir}")
        node(f"b_{exit_dir}")
        node(f"oout_{exit_dir}")
        edge(f"arm_{exit_dir}", f"q_{exit_dir}", f"b_{exit_dir}", 100.0)
        edge(f"out_{exit_dir}", f"b_{exit_dir}", f"oout_{exit_dir}", 50.0,
             fringe=True)
    for approach, turns in _EXIT_DIR.items():
        for turn, exit_dir in turns.items():
            edge(f"c_{approach}_{turn}", f"p_{approach}", f"q_{exit_dir}", 10.0)

    for side in ("EB", "WB"):
        node(f"o46in_{side}")
        node(f"g1_{side}")
        node(f"g2_{side}")
        node(f"o46out_{side}")
        edge(f"in46_{side}", f"o46in_{side}", f"g1_{side}", 50.0, fringe=True)
        edge(f"ap46_{side}", f"g1_{side}", f"g2_{side}", 100.0)
        edge(f"out46_{side}", f"g2_{side}", f"o46out_{side}", 50.0, fringe=True)

    locations = []

    def location(intersection, approach, movement, edge_id):
        locations.append({"id": len(locations), "intersection": intersection,
                          "approach": approach, "movement": movement,
                          "edge": edge_id})

    for approach in ("EB", "NB", "SB", "WB"):
        location(25, approach, "total", f"ap_{approach}")
    for approach in ("EB", "NB", "SB", "WB"):
        location(25, approach, "left", f"c_{approach}_left")
        location(25, approach, "right", f"c_{approach}_right")
    location(46, "EB", "total", "ap46_EB")
    location(46, "WB", "total", "ap46_WB")
    return {"nodes": nodes, "edges": edges, "locations": locations}


def day_profile(t: int) -> float:
    """Smooth daily demand factor peaking at exactly 1.0 on PEAK_SEGMENT."""
    return math.exp(-((t - PEAK_SEGMENT) / 24.0) ** 2)


def two_intersection_counts() -> CountTable:
    """Full-day CV counts tracing the peak values through the day profile.

    Turn counts are rounded per movement and totals are their sums (plus the
    through movement), so an exact integer route assignment exists for every
    segment; at the peak segment the profile factor is exactly 1.0 and the
    counts equal PEAK_COUNTS.
    """
    table = CountTable()
    doc = make_two_intersection_doc()
    by_triple = {(loc["intersection"], loc["approach"], loc["movement"]): loc["id"]
                 for loc in doc["locations"]}
    for t in range(SEGMENTS_PER_DAY):
        factor = day_profile(t)
        counts = {}
        for approach in ("EB", "NB", "SB", "WB"):
            left_peak = PEAK_COUNTS[(25, approach, "left")]
            right_peak = PEAK_COUNTS[(25, approach, "right")]
            through_peak = (PEAK_COUNTS[(25, approach, "total")]
                            - left_peak - right_peak)
            assert through_peak >= 0
            left = int(round(left_peak * factor))
            right = int(round(right_peak * factor))
            through = int(round(through_peak * factor))
            counts[(25, approach, "left")] = left
            counts[(25, approach, "right")] = right
            counts[(25, approach, "total")] = left + right + through
        for side in ("EB", "WB"):
            counts[(46, side, "total")] = int(round(
                PEAK_COUNTS[(46, side, "total")] * factor))
        for key, value in counts.items():
            table.add(SourceKind.CV, by_triple[key], t, value)
    table.validate()
    return table


# Hourly (manual, tracked) count pairs from a four-intersection field
# comparison: 8 directional locations, one off-peak and one peak hour.
FIELD_PAIRS = {
    0: {48: (823, 872), 68: (959, 905)},
    1: {48: (781, 839), 68: (1041, 1071)},
    2: {48: (1042, 1065), 68: (952, 950)},
    3: {48: (1106, 1114), 68: (1329, 1322)},
    4: {48: (1889, 1779), 68: (2088, 1962)},
    5: {48: (1059, 1089), 68: (726, 801)},
    6: {48: (979, 1096), 68: (1048, 1178)},
    7: {48: (1166, 1191), 68: (1441, 1553)},
}


def field_counts_csv() -> str:
    lines = ["source,location,segment,count"]
    for j, by_segment in sorted(FIELD_PAIRS.items()):
        for t, (manual, tracked) in sorted(by_segment.items()):
            lines.append(f"M,{j},{t},{manual}")
            lines.append(f"CV,{j},{t},{tracked}")
    return "\n".join(lines) + "\n"


def field_counts_table() -> CountTable:
    table = CountTable()
    for j, by_segment in FIELD_PAIRS.items():
        for t, (manual, tracked) in by_segment.items():
            table.add(SourceKind.M, j, t, manual)
            table.add(SourceKind.CV, j, t, tracked)
    table.validate()
    return table


# Location ids in the two-intersection fixture, by (intersection, approach,
# movement); see make_two_intersection_doc's location ordering.
LOC = {
    (25, "EB", "total"): 0, (25, "NB", "total"): 1, (25, "SB", "total"): 2,
    (25, "WB", "total"): 3, (25, "EB", "left"): 4, (25, "EB", "right"): 5,
    (25, "NB", "left"): 6, (25, "NB", "right"): 7, (25, "SB", "left"): 8,
    (25, "SB", "right"): 9, (25, "WB", "left"): 10, (25, "WB", "right"): 11,
    (46, "EB", "total"): 12, (46, "WB", "total"): 13,
}

# Center-intersection constraint set: raise every approach at the peak
# segment, with milder raises on the neighbors (totals only; the compiler
# fills in relaxed adjacents for the turn bounds).
CENTER_TARGET_LOWER = {
    (25, "EB", "total"): 200, (25, "WB", "total"): 450,
    (25, "NB", "total"): 250, (25, "SB", "total"): 400,
    (25, "EB", "left"): 30, (25, "EB", "right"): 80,
    (25, "WB", "left"): 250, (25, "WB", "right"): 200,
    (25, "NB", "right"): 150,
    (25, "SB", "left"): 200, (25, "SB", "right"): 40,
}
CENTER_ADJACENT_LOWER = {
    (25, "EB", "total"): 180, (25, "WB", "total"): 400,
    (25, "NB", "total"): 220, (25, "SB", "total"): 350,
}
# Side-street constraint set: pin both directions near their current level,
# slightly looser on the neighbors.
SIDE_TARGET = {(46, "EB", "total"): (45, 57), (46, "WB", "total"): (42, 52)}
SIDE_ADJACENT = {(46, "EB", "total"): (40, 62), (46, "WB", "total"): (37, 57)}


def center_spec_doc(segment: int = PEAK_SEGMENT) -> dict:
    atoms = [{"location": LOC[key], "segment": segment, "kind": "lower",
              "bound": bound, "adjacency": "target"}
             for key, bound in CENTER_TARGET_LOWER.items()]
    for s in (segment - 1, segment + 1):
        atoms.extend({"location": LOC[key], "segment": s, "kind": "lower",
                      "bound": bound, "adjacency": "adjacent"}
                     for key, bound in CENTER_ADJACENT_LOWER.items())
    return {"atoms": atoms}


def side_spec_doc(segment: int = PEAK_SEGMENT) -> dict:
    atoms = []
    for key, (lo, hi) in SIDE_TARGET.items():
        atoms.append({"location": LOC[key], "segment": segment, "kind": "lower",
                      "bound": lo, "adjacency": "target"})
        atoms.append({"location": LOC[key], "segment": segment, "kind": "upper",
                      "bound": hi, "adjacency": "target"})
    for s in (segment - 1, segment + 1):
        for key, (lo, hi) in SIDE_ADJACENT.items():
            atoms.append({"location": LOC[key], "segment": s, "kind": "lower",
                          "bound": lo, "adjacency": "adjacent"})
            atoms.append({"location": LOC[key], "segment": s, "kind": "upper",
                          "bound": hi, "adjacency": "adjacent"})
    return {"atoms": atoms}


CENTER_FEEDBACK_TEXT = ("Expecting more cars both eastbound and westbound at "
                        "this hour; every approach here should max out.")
SIDE_FEEDBACK_TEXT = ("Not much side-street traffic out there; what you have "
                      "looks accurate.")


def build_two_state(lam_t: float = 0.0):
    """Solved baseline over the two-intersection fixture, ready for
    refinement: exact unit calibration bands pin each segment to its
    profile counts."""
    from demandforge.counts import CalibrationBounds, make_bands
    from demandforge.qipsolve import SegmentProblem, SolveConfig, solve_day
    from demandforge.refine import RefinementState

    network = netgraph.load_network(make_two_intersection_doc())
    routes = netgraph.enumerate_routes(network)
    incidence = netgraph.build_incidence(routes, network.counting_locations)
    table = two_intersection_counts()
    bands = make_bands(table, CalibrationBounds(1.0, 1.0, SourceKind.CV),
                       SourceKind.CV)
    config = SolveConfig(lambda_temporal=lam_t)
    nonfringe = frozenset(r.id for r in routes if not r.fringe)
    problems = [SegmentProblem(
        incidence=incidence,
        bands_cv={j: b for (j, tt), b in bands.items() if tt == t},
        bands_ld={}, nonfringe_ids=nonfringe,
        lambda_nonfringe=config.lambda_nonfringe,
        lambda_temporal=config.lambda_temporal,
    ) for t in range(SEGMENTS_PER_DAY)]
    solutions = solve_day(problems, config)
    state = RefinementState(problems=problems, solutions=solutions,
                            network=network, incidence=incidence,
                            config=config)
    return state, bands, routes


def build_recovery_day(seed: int):
    """Noisy-count day over the dense 3x3 grid with known ground truth.

    Truth follows a commute-style shape (peaks at both window ends, 5%
    midday dip); each counting location's observed counts carry one
    systematic multiplicative bias drawn uniform from [0.94, 1.12], the
    same interval the calibration bands assume.
    """
    from demandforge.qipsolve import SegmentProblem
    from demandforge.counts import CountBand

    doc = make_grid_doc(3, stubs="both", location_edges=grid3_location_edges())
    net = netgraph.load_network(doc)
    routes = netgraph.enumerate_routes(net)
    incidence = netgraph.build_incidence(routes, net.counting_locations)
    n, m = incidence.n_routes, incidence.n_locations

    def day_shape(t):
        return 1.0 - 0.05 * (1.0 - math.cos(2.0 * math.pi * t / 96.0)) / 2.0

    rng = np.random.default_rng(seed)
    amps = rng.integers(2, 30, size=n)
    truth = {t: np.round(amps * day_shape(t)).astype(np.int64)
             for t in range(SEGMENTS_PER_DAY)}
    bias = rng.uniform(0.94, 1.12, size=m)
    bands = {}
    for t in range(SEGMENTS_PER_DAY):
        observed = np.round(incidence.location_counts(truth[t]) * bias).astype(int)
        for j in range(m):
            bands[(j, t)] = CountBand(0.94 * observed[j], 1.12 * observed[j])
    nonfringe = frozenset(r.id for r in routes if not r.fringe)
    problems = [SegmentProblem(
        incidence=incidence,
        bands_cv={j: bands[(j, t)] for j in range(m)},
        bands_ld={}, nonfringe_ids=nonfringe,
        lambda_nonfringe=10.0, lambda_temporal=10.0)
        for t in range(SEGMENTS_PER_DAY)]
    return incidence, bands, problems, truth


def build_scaled_day(grid_size: int = 27, n_locations: int = 80,
                     n_segments: int = SEGMENTS_PER_DAY, seed: int = 5):
    """Large synthetic day: a grid with entry and exit stubs at every road
    end, giving > 10^4 enumerated routes, with bands on a seeded sample of
    interior edges."""
    from demandforge.qipsolve import SegmentProblem
    from demandforge.counts import CountBand

    doc = make_grid_doc(grid_size, stubs="both")
    net = netgraph.load_network(doc)
    routes = netgraph.enumerate_routes(net)
    rng = np.random.default_rng(seed)
    interior = sorted(eid for eid, e in net.edges.items() if not e.fringe)
    sample = sorted(rng.choice(len(interior), size=n_locations, replace=False))
    locations = [netgraph.CountingLocation(id=i, intersection_id=i,
                                           approach="EB", movement="total",
                                           edge_id=interior[k])
                 for i, k in enumerate(sample)]
    incidence = netgraph.build_incidence(routes, locations)
    n, m = incidence.n_routes, incidence.n_locations
    usage = np.zeros(n, dtype=np.int64)
    np.add.at(usage, rng.choice(n, size=3000, replace=True), 1)
    observed = np.round(incidence.location_counts(usage)
                        * rng.uniform(0.94, 1.12, size=m)).astype(int)
    bands = {j: CountBand(0.94 * observed[j], 1.12 * observed[j])
             for j in range(m)}
    nonfringe = frozenset(r.id for r in routes if not r.fringe)
    problems = [SegmentProblem(incidence=incidence, bands_cv=dict(bands),
                               bands_ld={}, nonfringe_ids=nonfringe,
                               lambda_nonfringe=10.0, lambda_temporal=10.0)
                for _ in range(n_segments)]
    return incidence, problems


def table_to_csv(table: CountTable) -> str:
    lines = ["source,location,segment,count"]
    for (source, j, t), count in sorted(table.values.items(),
                                        key=lambda kv: (kv[0][0].value,
                                                        kv[0][1], kv[0][2])):
        lines.append(f"{source.value},{j},{t},{count}")
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def two_net():
    return netgraph.load_network(make_two_intersection_doc())


@pytest.fixture(scope="session")
def two_counts():
    return two_intersection_counts()
