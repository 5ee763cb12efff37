"""Serialize solved demand into a simulator-ready route file and report how
the solution sits against its calibration bands.

The route document follows the widely used XML schema (SUMO-compatible):
vehicle type definitions, shared route elements listing edge ids, then one
vehicle element per trip sorted by departure time. Emission is a pure
function of its inputs and the seed, so fixed inputs give byte-identical
output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from demandforge.counts import CountBand
from demandforge.netgraph import IncidenceMatrix, Route
from demandforge.qipsolve import (MINUTES_PER_SEGMENT, MinuteSchedule,
                                  RouteSolution, fringe_share, slack_for)


class EmitError(ValueError):
    """Invalid emission inputs."""


@dataclass(frozen=True)
class VehicleRecord:
    id: str
    route: int
    depart_time: float   # seconds from midnight
    vehicle_class: str

    def __post_init__(self):
        if not 0 <= self.depart_time < 86400:
            raise EmitError(f"depart_time {self.depart_time} outside the day")


def _check_normalized(class_dist: Dict[str, float]):
    if not class_dist:
        raise EmitError("class distribution is empty")
    total = sum(class_dist.values())
    if abs(total - 1.0) > 1e-9:
        raise EmitError(f"class distribution sums to {total}, not 1")
    if any(p < 0 for p in class_dist.values()):
        raise EmitError("class probabilities must be nonnegative")


def assign_vehicle_classes(count: int, class_dist: Dict[str, float],
                           seed: int) -> List[str]:
    """Draw `count` class labels i.i.d. from the distribution,
    deterministically for a fixed seed."""
    _check_normalized(class_dist)
    labels = sorted(class_dist)
    cumulative = np.cumsum([class_dist[name] for name in labels])
    cumulative[-1] = 1.0  # guard against round-off at the top
    draws = np.random.default_rng(seed).random(count)
    picks = np.searchsorted(cumulative, draws, side="right")
    return [labels[min(int(p), len(labels) - 1)] for p in picks]


def build_vehicles(schedules: Sequence[MinuteSchedule], class_dist: Dict[str, float],
                   seed: int, start_segment: int = 0) -> List[VehicleRecord]:
    """One vehicle per scheduled unit, sorted by departure time.

    Minute m of segment t starts at 60*(15*t + m - 1) seconds; the c vehicles
    of one (route, minute) cell depart at evenly spaced offsets k*60/(c+1).
    """
    _check_normalized(class_dist)
    raw: List[Tuple[float, int, int, int, int]] = []
    for offset_t, schedule in enumerate(schedules):
        t = start_segment + offset_t
        for i in range(schedule.c.shape[0]):
            for m in range(1, MINUTES_PER_SEGMENT + 1):
                c = int(schedule.c[i, m - 1])
                minute_start = 60.0 * (MINUTES_PER_SEGMENT * t + (m - 1))
                for k in range(c):
                    raw.append((minute_start + k * 60.0 / (c + 1), t, m, i, k))
    raw.sort()
    classes = assign_vehicle_classes(len(raw), class_dist, seed)
    return [VehicleRecord(id=f"veh{idx}", route=i, depart_time=depart,
                          vehicle_class=classes[idx])
            for idx, (depart, _t, _m, i, _k) in enumerate(raw)]


def emit_routes(schedules: Sequence[MinuteSchedule], routes: Sequence[Route],
                class_dist: Dict[str, float], seed: int,
                start_segment: int = 0) -> str:
    """Render the route XML document for a contiguous run of segments."""
    vehicles = build_vehicles(schedules, class_dist, seed, start_segment)
    used = sorted({v.route for v in vehicles})
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', "<routes>"]
    for name in sorted(class_dist):
        lines.append(f'    <vType id="{name}"/>')
    for i in used:
        edges = " ".join(str(e) for e in routes[i].edge_sequence)
        lines.append(f'    <route id="route{i}" edges="{edges}"/>')
    for v in vehicles:
        lines.append(f'    <vehicle id="{v.id}" type="{v.vehicle_class}" '
                     f'depart="{v.depart_time:.2f}" route="route{v.route}"/>')
    lines.append("</routes>")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DiffCell:
    segment: int
    location: int
    simulated: float
    lower: float
    upper: float
    violation: float  # 0 exactly when simulated lies inside the band


@dataclass
class DiffReport:
    cells: List[DiffCell]
    per_segment: Dict[int, dict]   # segment -> {mean, min, max}
    total_vehicles: int
    fringe_share: float

    def to_json(self) -> dict:
        return {
            "cells": [vars(c) for c in self.cells],
            "per_segment": {str(t): agg for t, agg in self.per_segment.items()},
            "total_vehicles": self.total_vehicles,
            "fringe_share": self.fringe_share,
        }

    def to_csv(self) -> str:
        lines = ["segment,location,simulated,lo,hi,violation"]
        for c in self.cells:
            lines.append(f"{c.segment},{c.location},{c.simulated:g},"
                         f"{c.lower:g},{c.upper:g},{c.violation:g}")
        return "\n".join(lines) + "\n"


def diff_report(solutions: Sequence[RouteSolution], incidence: IncidenceMatrix,
                bands: Dict[Tuple[int, int], CountBand],
                nonfringe_ids: Optional[Iterable[int]] = None) -> DiffReport:
    """Compare a day of solutions against one source's bands.

    Violations are the analytic band residuals (positive below the band,
    negative above, zero inside); per-segment aggregates take the mean and
    range over that segment's banded locations.
    """
    cells: List[DiffCell] = []
    per_segment: Dict[int, dict] = {}
    total = 0
    fringe_total = 0.0
    weight_total = 0
    nonfringe = frozenset(nonfringe_ids) if nonfringe_ids is not None else frozenset()
    for t, solution in enumerate(solutions):
        counts = incidence.location_counts(solution.usage)
        violations = []
        for j in sorted(loc for (loc, seg) in bands if seg == t):
            band = bands[(j, t)]
            v = slack_for(float(counts[j]), band.lower, band.upper)
            cells.append(DiffCell(segment=t, location=j,
                                  simulated=float(counts[j]),
                                  lower=band.lower, upper=band.upper,
                                  violation=v))
            violations.append(v)
        if violations:
            per_segment[t] = {
                "mean": float(np.mean(violations)),
                "min": float(np.min(violations)),
                "max": float(np.max(violations)),
            }
        seg_total = int(solution.usage.sum())
        total += seg_total
        fringe_total += fringe_share(solution.usage, nonfringe) * seg_total
        weight_total += seg_total
    share = fringe_total / weight_total if weight_total else 1.0
    return DiffReport(cells=cells, per_segment=per_segment,
                      total_vehicles=total, fringe_share=share)
