"""Per-location, per-segment vehicle counts by source, and the calibration
bands that turn a noisy count into a plausible range for the true count.

A day is 96 fifteen-minute segments. Counts come from three sources: manual
ground truth (M), tracked computer vision (CV), and legacy loop detectors
(LD). Where sources overlap, the ratio of ground truth to a source's counts
yields conservative scaling bounds for that source; applying the bounds to a
count gives the band the true count is presumed to lie in.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

SEGMENTS_PER_DAY = 96

log = logging.getLogger(__name__)


class CountError(ValueError):
    """Malformed count data or an impossible calibration request."""


class SourceKind(enum.Enum):
    M = "M"    # manual ground truth
    CV = "CV"  # tracked computer vision
    LD = "LD"  # loop / legacy detector

    @classmethod
    def parse(cls, text: str) -> "SourceKind":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise CountError(f"unknown count source {text!r}") from None


@dataclass
class CountTable:
    """Write-once store of (source, location, segment) -> count.

    Within one source, a location is either covered for every segment that
    source declares or absent entirely; ragged per-location coverage is
    rejected by `validate`.
    """
    values: Dict[Tuple[SourceKind, int, int], int] = field(default_factory=dict)

    def add(self, source: SourceKind, location: int, segment: int, count: int):
        if count < 0:
            raise CountError(f"negative count at ({source.value}, {location}, {segment})")
        if not 0 <= segment < SEGMENTS_PER_DAY:
            raise CountError(f"segment out of range: {segment}")
        key = (source, location, segment)
        if key in self.values:
            raise CountError(
                f"duplicate count row ({source.value}, {location}, {segment})")
        self.values[key] = int(count)

    def get(self, source: SourceKind, location: int, segment: int) -> Optional[int]:
        return self.values.get((source, location, segment))

    def locations(self, source: SourceKind) -> List[int]:
        return sorted({j for (s, j, _t) in self.values if s is source})

    def segments(self, source: SourceKind) -> List[int]:
        return sorted({t for (s, _j, t) in self.values if s is source})

    def entries(self, source: SourceKind) -> List[Tuple[int, int, int]]:
        """(location, segment, count) triples for one source, sorted."""
        out = [(j, t, c) for (s, j, t), c in self.values.items() if s is source]
        out.sort()
        return out

    def validate(self):
        for source in SourceKind:
            declared = set(self.segments(source))
            if not declared:
                continue
            for j in self.locations(source):
                have = {t for (s, jj, t) in self.values if s is source and jj == j}
                if have != declared:
                    missing = sorted(declared - have)
                    raise CountError(
                        f"ragged coverage: source {source.value} location {j} "
                        f"missing segments {missing}")

    def merge(self, other: "CountTable") -> "CountTable":
        merged = CountTable(values=dict(self.values))
        for (s, j, t), c in other.values.items():
            merged.add(s, j, t, c)
        merged.validate()
        return merged


def ingest_counts(file, source: SourceKind,
                  known_locations: Optional[Iterable[int]] = None) -> CountTable:
    """Read one source's rows from a count CSV.

    The CSV has columns ``source,location,segment,count``; rows for other
    sources are skipped. When `known_locations` is given, rows referencing
    any other location are rejected.
    """
    if isinstance(file, (str, Path)):
        handle: io.TextIOBase = open(file, newline="")
        close = True
    else:
        handle, close = file, False
    known = set(known_locations) if known_locations is not None else None
    table = CountTable()
    try:
        reader = csv.DictReader(handle)
        for row in reader:
            if SourceKind.parse(row["source"]) is not source:
                continue
            location = int(row["location"])
            if known is not None and location not in known:
                raise CountError(f"unknown location {location}")
            table.add(source, location, int(row["segment"]), int(row["count"]))
    finally:
        if close:
            handle.close()
    table.validate()
    return table


def ingest_all(file, known_locations: Optional[Iterable[int]] = None) -> CountTable:
    """Read every row of a count CSV into one table."""
    merged = CountTable()
    if isinstance(file, (str, Path)):
        text = Path(file).read_text()
    else:
        text = file.read()
    for source in SourceKind:
        part = ingest_counts(io.StringIO(text), source, known_locations)
        for (s, j, t), c in part.values.items():
            merged.add(s, j, t, c)
    merged.validate()
    return merged


@dataclass(frozen=True)
class CalibrationBounds:
    """Multiplicative scaling interval for one count source."""
    alpha_lb: float
    alpha_ub: float
    source: SourceKind

    def __post_init__(self):
        if not (0 < self.alpha_lb <= self.alpha_ub):
            raise CountError(
                f"invalid calibration bounds ({self.alpha_lb}, {self.alpha_ub})")


@dataclass(frozen=True)
class CountBand:
    """Presumed range [lower, upper] for a true count given a source count."""
    lower: float
    upper: float

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if self.lower < 0 or self.lower > self.upper:
            raise CountError(f"invalid band [{self.lower}, {self.upper}]")


def overlap_ratios(table: CountTable, numerator: SourceKind,
                   denominator: SourceKind) -> List[Tuple[int, int, float]]:
    """Per-(location, segment) count ratios where both sources report.

    Pairs where either side is zero are excluded with a warning: near-empty
    locations give unstable ratios and a zero numerator would collapse the
    lower bound to zero.
    """
    ratios = []
    for (s, j, t), denom in sorted(table.values.items(), key=lambda kv: (kv[0][1], kv[0][2])):
        if s is not denominator:
            continue
        num = table.get(numerator, j, t)
        if num is None:
            continue
        if denom == 0 or num == 0:
            log.warning("calibration overlap (%s, %s) at location %d segment %d "
                        "has a zero count; pair excluded", numerator.value,
                        denominator.value, j, t)
            continue
        ratios.append((j, t, num / denom))
    return ratios


def calibrate_bounds(table: CountTable) -> CalibrationBounds:
    """Scaling bounds for CV counts from their overlap with ground truth.

    Lower bound is the smallest truth/CV ratio over the overlap, upper bound
    the largest; both sides then bracket the true count at CV locations.
    """
    ratios = overlap_ratios(table, SourceKind.M, SourceKind.CV)
    if not ratios:
        raise CountError("no usable overlap between manual and CV counts")
    values = [r for (_j, _t, r) in ratios]
    return CalibrationBounds(alpha_lb=min(values), alpha_ub=max(values),
                             source=SourceKind.CV)


def chain_bounds(cv_bounds: CalibrationBounds, table: CountTable) -> CalibrationBounds:
    """Extrapolate loop-detector bounds through the CV bounds.

    Ground truth rarely overlaps loop detectors directly, so the LD interval
    is the CV interval widened by the extremes of the CV/LD count ratios.
    """
    if cv_bounds.source is not SourceKind.CV:
        raise CountError("chain_bounds expects CV calibration bounds")
    ratios = overlap_ratios(table, SourceKind.CV, SourceKind.LD)
    if not ratios:
        raise CountError("no usable overlap between CV and LD counts")
    values = [r for (_j, _t, r) in ratios]
    return CalibrationBounds(alpha_lb=cv_bounds.alpha_lb * min(values),
                             alpha_ub=cv_bounds.alpha_ub * max(values),
                             source=SourceKind.LD)


def make_bands(table: CountTable, bounds: CalibrationBounds,
               source: SourceKind) -> Dict[Tuple[int, int], CountBand]:
    """Band per (location, segment) holding a count from `source`.

    Locations without counts get no band at all: an absent detector means
    "unconstrained", not "no traffic".
    """
    bands = {}
    for j, t, count in table.entries(source):
        bands[(j, t)] = CountBand(lower=bounds.alpha_lb * count,
                                  upper=bounds.alpha_ub * count)
    return bands


def calibration_report(bounds: CalibrationBounds,
                       ratios: List[Tuple[int, int, float]]) -> dict:
    """JSON-ready calibration summary."""
    return {
        "source": bounds.source.value,
        "alpha_lb": bounds.alpha_lb,
        "alpha_ub": bounds.alpha_ub,
        "ratios": [{"location": j, "segment": t, "ratio": r} for j, t, r in ratios],
    }
