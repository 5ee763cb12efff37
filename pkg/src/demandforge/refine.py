"""Iterative refinement of a solved day from natural-language feedback.

Each feedback item names a segment, an intersection, and free-form text. A
pluggable language-model client compiles the text into a declarative
constraint document: hard lower/upper bounds on location totals, with
relaxed copies on the adjacent segments for temporal continuity. Every
candidate document passes three gates before it is accepted:

1. syntactic  - the reply parses into the schema and satisfies its
                invariants;
2. feasible   - the constrained segments (target plus adjacent) still admit
                solutions, found by the regular solvers with the bounds made
                hard;
3. semantic   - the before/after counts actually move the way the feedback
                asked (rule-based comparator, optionally AND-ed with the
                client's own reflection verdict).

Failures discard the candidate and re-prompt, up to a retry budget; accepted
constraints accumulate, and the whole day is re-solved at the end.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from demandforge.counts import SEGMENTS_PER_DAY
from demandforge.netgraph import IncidenceMatrix, RoadNetwork
from demandforge.qipsolve import (HardAtom, InfeasibleError, RouteSolution,
                                  SegmentProblem, SolveConfig, solve_day,
                                  solve_segment)

DEFAULT_RELAX_LOWER = 0.9
DEFAULT_RELAX_UPPER = 1.1
ACCURATE_TOLERANCE = 0.10


class RefineError(ValueError):
    """Refinement pipeline failure."""


class SyntacticError(RefineError):
    """Client reply does not parse into a valid constraint document."""


@dataclass(frozen=True)
class FeedbackItem:
    k: int
    segment: int
    intersection: int
    text: str

    def __post_init__(self):
        if not 0 <= self.segment < SEGMENTS_PER_DAY:
            raise RefineError(f"feedback segment {self.segment} out of range")


@dataclass(frozen=True)
class Atom:
    """One bound on a location's traversal total in one segment."""
    location: int
    movement: str
    segment: int
    kind: str          # "lower" | "upper"
    bound: float
    feedback: int      # provenance: feedback iteration k
    adjacency: str     # "target" | "adjacent"

    def to_json(self) -> dict:
        return {
            "location": self.location, "movement": self.movement,
            "segment": self.segment, "kind": self.kind, "bound": self.bound,
            "provenance": {"feedback": self.feedback, "adjacency": self.adjacency},
        }


@dataclass
class ConstraintSpec:
    atoms: List[Atom]

    def to_json(self) -> dict:
        return {"atoms": [a.to_json() for a in self.atoms]}

    def segments(self) -> List[int]:
        return sorted({a.segment for a in self.atoms})


def adjacent_segments(segment: int) -> List[int]:
    """Neighbors of a segment, clamped to the day; never the segment itself."""
    out = []
    for s in (segment - 1, segment + 1):
        s = min(max(s, 0), SEGMENTS_PER_DAY - 1)
        if s != segment and s not in out:
            out.append(s)
    return out


class LlmClient:
    """Interface for the feedback compiler backend."""

    supports_reflection = False

    def compile(self, prompt: str) -> str:
        raise NotImplementedError

    def reflect(self, prompt: str) -> bool:
        raise NotImplementedError


class MockLlmClient(LlmClient):
    """Deterministic scripted client.

    The script is a sequence of JSON values: strings (or objects, which are
    serialized) are compile completions consumed in order; booleans are
    reflection verdicts consumed in order. Reflection defaults to True when
    the script provides no verdicts.
    """

    def __init__(self, script: Sequence, supports_reflection: bool = False):
        self.completions: List[str] = []
        self.verdicts: List[bool] = []
        for entry in script:
            if isinstance(entry, bool):
                self.verdicts.append(entry)
            elif isinstance(entry, str):
                self.completions.append(entry)
            else:
                self.completions.append(json.dumps(entry))
        self.supports_reflection = supports_reflection
        self.prompts: List[str] = []

    @classmethod
    def from_script_file(cls, path, **kwargs) -> "MockLlmClient":
        entries = [json.loads(line) for line in
                   Path(path).read_text().splitlines() if line.strip()]
        return cls(entries, **kwargs)

    def compile(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self.completions:
            raise RefineError("mock script ran out of completions")
        return self.completions.pop(0)

    def reflect(self, prompt: str) -> bool:
        self.prompts.append(prompt)
        if self.verdicts:
            return self.verdicts.pop(0)
        return True


class HttpLlmClient(LlmClient):
    """Minimal HTTP client: POST {"prompt": text}, read {"completion": text}.

    Endpoint and credential come from DEMANDFORGE_LLM_URL and
    DEMANDFORGE_LLM_KEY unless given explicitly.
    """

    supports_reflection = True

    def __init__(self, url: Optional[str] = None, key: Optional[str] = None,
                 timeout: float = 60.0):
        self.url = url or os.environ.get("DEMANDFORGE_LLM_URL")
        self.key = key or os.environ.get("DEMANDFORGE_LLM_KEY")
        self.timeout = timeout
        if not self.url:
            raise RefineError("no LLM endpoint configured "
                              "(set DEMANDFORGE_LLM_URL)")

    def _post(self, prompt: str) -> str:
        import httpx
        headers = {"Authorization": f"Bearer {self.key}"} if self.key else {}
        response = httpx.post(self.url, json={"prompt": prompt},
                              headers=headers, timeout=self.timeout)
        response.raise_for_status()
        return response.json()["completion"]

    def compile(self, prompt: str) -> str:
        return self._post(prompt)

    def reflect(self, prompt: str) -> bool:
        reply = self._post(prompt).strip().lower()
        return reply.startswith(("yes", "true"))


@dataclass
class RefinementState:
    """Evolving constrained problem plus its latest solutions."""
    problems: List[SegmentProblem]
    solutions: List[RouteSolution]
    network: RoadNetwork
    incidence: IncidenceMatrix
    config: SolveConfig = field(default_factory=SolveConfig)
    accepted: List[ConstraintSpec] = field(default_factory=list)
    iteration: int = 0
    tally: Dict[str, int] = field(default_factory=lambda: {
        "syntactic_fail": 0, "feasibility_fail": 0, "semantic_fail": 0,
        "accepted": 0})


def get_counts(solutions: Sequence[RouteSolution], incidence: IncidenceMatrix,
               location: int, segment: int) -> int:
    """Traversal total of one location in one segment of a solved day."""
    if not 0 <= location < incidence.n_locations:
        raise RefineError(f"unknown location {location}")
    if not 0 <= segment < len(solutions):
        raise RefineError(f"no solution for segment {segment}")
    counts = incidence.location_counts(solutions[segment].usage)
    return int(round(counts[location]))


def intersection_counts(state: RefinementState, intersection: int, segment: int,
                        solutions: Optional[Sequence[RouteSolution]] = None
                        ) -> Dict[int, int]:
    """location id -> count for every location of one intersection."""
    solutions = state.solutions if solutions is None else solutions
    locs = state.network.intersections().get(intersection)
    if not locs:
        raise RefineError(f"unknown intersection {intersection}")
    return {loc.id: get_counts(solutions, state.incidence, loc.id, segment)
            for loc in locs}


def _schema_description() -> str:
    return (
        'Reply with JSON: {"atoms": [{"location": <location id>, '
        '"movement": "total|left|right", "segment": <0..95>, '
        '"kind": "lower|upper", "bound": <nonnegative number>, '
        '"adjacency": "target|adjacent"}]}. Bounds are hard limits on the '
        "location's traversal total. Put your main bounds on the target "
        "segment and relaxed copies on the adjacent segments. To look up "
        'current counts first, reply instead with {"tool": "get_counts", '
        '"location": <id>, "segment": <t>}.')


def _network_listing(network: RoadNetwork) -> str:
    lines = []
    for intersection, locs in sorted(network.intersections().items()):
        parts = ", ".join(f"{loc.approach} {loc.movement} = location {loc.id}"
                          for loc in locs)
        lines.append(f"intersection {intersection}: {parts}")
    return "\n".join(lines)


def build_prompt(item: FeedbackItem, state: RefinementState) -> str:
    return (
        f"Stakeholder feedback for intersection {item.intersection} during "
        f"segment {item.segment}:\n{item.text}\n\n"
        f"Known intersections and counting locations:\n"
        f"{_network_listing(state.network)}\n\n"
        f"{_schema_description()}")


def _parse_atoms(doc, item: Optional[FeedbackItem],
                 network: RoadNetwork) -> List[Atom]:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SyntacticError(f"reply is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("atoms"), list):
        raise SyntacticError('reply must be an object with an "atoms" list')
    locations = {loc.id: loc for loc in network.counting_locations}
    atoms: List[Atom] = []
    for raw in doc["atoms"]:
        if not isinstance(raw, dict):
            raise SyntacticError("atoms must be objects")
        try:
            location = int(raw["location"])
            segment = int(raw["segment"])
            kind = str(raw["kind"])
            bound = float(raw["bound"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SyntacticError(f"malformed atom: {exc}") from None
        if location not in locations:
            raise SyntacticError(f"unknown location {location}")
        movement = str(raw.get("movement", locations[location].movement))
        if movement != locations[location].movement:
            raise SyntacticError(
                f"atom movement {movement!r} does not match location "
                f"{location} ({locations[location].movement})")
        if kind not in ("lower", "upper"):
            raise SyntacticError(f"unknown bound kind {kind!r}")
        if bound < 0:
            raise SyntacticError(f"negative bound {bound}")
        if not 0 <= segment < SEGMENTS_PER_DAY:
            raise SyntacticError(f"segment {segment} out of range")
        provenance = raw.get("provenance", {})
        adjacency = str(raw.get("adjacency",
                                provenance.get("adjacency"))
                        or ("target" if item and segment == item.segment
                            else "adjacent"))
        if adjacency not in ("target", "adjacent"):
            raise SyntacticError(f"unknown adjacency {adjacency!r}")
        feedback = int(provenance.get("feedback", item.k if item else 0))
        atoms.append(Atom(location=location, movement=movement, segment=segment,
                          kind=kind, bound=bound, feedback=feedback,
                          adjacency=adjacency))
    return atoms


def _check_adjacency(atoms: Sequence[Atom]):
    """Every target atom needs relaxed copies on the adjacent segments."""
    index = {}
    for a in atoms:
        index.setdefault((a.location, a.kind, a.segment), []).append(a)
    for a in atoms:
        if a.adjacency != "target":
            continue
        for s in adjacent_segments(a.segment):
            matches = index.get((a.location, a.kind, s))
            if not matches:
                raise SyntacticError(
                    f"missing relaxed adjacent constraints for location "
                    f"{a.location} {a.kind} at segment {s}")
            relaxed = (min(m.bound for m in matches) <= a.bound
                       if a.kind == "lower"
                       else max(m.bound for m in matches) >= a.bound)
            if not relaxed:
                raise SyntacticError(
                    f"adjacent {a.kind} bound at segment {s} is tighter than "
                    f"the target for location {a.location}")


def verify_syntactic(reply, network: RoadNetwork,
                     item: Optional[FeedbackItem] = None) -> ConstraintSpec:
    """Parse and validate a constraint document as-is (no autofill)."""
    atoms = _parse_atoms(reply, item, network)
    _check_adjacency(atoms)
    return ConstraintSpec(atoms=atoms)


def _autofill_adjacent(atoms: List[Atom]) -> List[Atom]:
    """Add default relaxed adjacent atoms where the client omitted them."""
    index = {(a.location, a.kind, a.segment) for a in atoms}
    filled = list(atoms)
    for a in atoms:
        if a.adjacency != "target":
            continue
        factor = DEFAULT_RELAX_LOWER if a.kind == "lower" else DEFAULT_RELAX_UPPER
        for s in adjacent_segments(a.segment):
            if (a.location, a.kind, s) not in index:
                filled.append(replace(a, segment=s, bound=a.bound * factor,
                                      adjacency="adjacent"))
                index.add((a.location, a.kind, s))
    return filled


def _parse_tool_call(reply: str) -> Optional[Tuple[int, int]]:
    try:
        doc = json.loads(reply)
    except json.JSONDecodeError:
        return None
    if isinstance(doc, dict) and doc.get("tool") == "get_counts":
        try:
            return int(doc["location"]), int(doc["segment"])
        except (KeyError, TypeError, ValueError):
            return None
    return None


def compile_feedback(item: FeedbackItem, state: RefinementState,
                     client: LlmClient, tool_limit: int = 8) -> ConstraintSpec:
    """Prompt the client and assemble its reply into a ConstraintSpec.

    The client may issue get_counts tool calls before answering; missing
    adjacent atoms are filled in with the default relaxation factors before
    the document is validated.
    """
    if not state.solutions:
        raise RefineError("compile_feedback needs a solved baseline")
    prompt = build_prompt(item, state)
    for _ in range(tool_limit):
        reply = client.compile(prompt)
        call = _parse_tool_call(reply)
        if call is None:
            atoms = _autofill_adjacent(_parse_atoms(reply, item, state.network))
            _check_adjacency(atoms)
            return ConstraintSpec(atoms=atoms)
        location, segment = call
        value = get_counts(state.solutions, state.incidence, location, segment)
        prompt += (f"\nget_counts(location={location}, segment={segment}) "
                   f"= {value}")
    raise SyntacticError("tool-call budget exhausted without a constraint "
                         "document")


def verify_feasible(state: RefinementState, spec: ConstraintSpec
                    ) -> Dict[int, RouteSolution]:
    """Solve the constrained target and adjacent segments.

    The candidate atoms join the already accepted ones as hard bounds;
    raises InfeasibleError when any segment admits no solution. State is
    never mutated, so a rejection leaves everything untouched.
    """
    candidates: Dict[int, RouteSolution] = {}
    for segment in spec.segments():
        base = state.problems[segment]
        extra = list(base.extra_constraints)
        extra.extend(HardAtom(a.location, a.kind, a.bound)
                     for a in spec.atoms if a.segment == segment)
        if segment == 0:
            prev = None
        elif segment - 1 in candidates:
            prev = candidates[segment - 1].usage.copy()
        else:
            prev = state.solutions[segment - 1].usage.copy()
        problem = replace(base, extra_constraints=extra, r_prev=prev)
        candidates[segment] = solve_segment(problem, state.config)
    return candidates


_APPROACH_WORDS = {
    "EB": ("eastbound", "east-bound", " eb "),
    "NB": ("northbound", "north-bound", " nb "),
    "SB": ("southbound", "south-bound", " sb "),
    "WB": ("westbound", "west-bound", " wb "),
}
_INCREASE_WORDS = ("increase", "more", "max out", "packed", "busier",
                   "heavier", "higher")
_DECREASE_WORDS = ("decrease", "fewer", "less", "too much", "too many",
                   "reduce", "quieter", "lighter")
_ACCURATE_WORDS = ("accurate", "looks right", "looks good", "no change",
                   "correct", "as expected", "about right")


def parse_intent(text: str) -> Optional[str]:
    """Directional intent of a feedback text; None when ambiguous."""
    lowered = text.lower()
    accurate = any(w in lowered for w in _ACCURATE_WORDS)
    increase = any(w in lowered for w in _INCREASE_WORDS)
    decrease = any(w in lowered for w in _DECREASE_WORDS)
    if accurate and not (increase or decrease):
        return "accurate"
    if increase and not decrease:
        return "increase"
    if decrease and not increase:
        return "decrease"
    return None


def named_approaches(text: str) -> List[str]:
    padded = f" {text.lower()} "
    found = [code for code, words in _APPROACH_WORDS.items()
             if any(w in padded for w in words)]
    return found


def verify_semantic(before_counts: Dict[int, int], after_counts: Dict[int, int],
                    item: FeedbackItem, client: LlmClient,
                    network: Optional[RoadNetwork] = None) -> bool:
    """Rule-based check that the counts moved the way the feedback asked.

    Compares total-movement locations on the approaches the text names (all
    approaches when none are named); ambiguity fails closed. A client that
    supports reflection gets the final AND.
    """
    intent = parse_intent(item.text)
    if intent is None:
        return False
    if network is not None:
        locs = [loc for loc in network.intersections().get(item.intersection, [])
                if loc.movement == "total"]
        wanted = named_approaches(item.text)
        if wanted:
            locs = [loc for loc in locs if loc.approach in wanted]
        keys = [loc.id for loc in locs if loc.id in before_counts]
    else:
        keys = sorted(before_counts)
    if not keys:
        return False
    verdict = True
    for j in keys:
        before, after = before_counts[j], after_counts[j]
        if intent == "increase" and not after > before:
            verdict = False
        elif intent == "decrease" and not after < before:
            verdict = False
        elif intent == "accurate" and abs(after - before) > ACCURATE_TOLERANCE * before:
            verdict = False
    if verdict and client is not None and client.supports_reflection:
        lines = [f"location {j}: before {before_counts[j]}, after {after_counts[j]}"
                 for j in keys]
        prompt = (f"Feedback: {item.text}\n" + "\n".join(lines) +
                  "\nDoes the change match the feedback? Answer yes or no.")
        verdict = client.reflect(prompt)
    return verdict


def refine_loop(feedback: Sequence[FeedbackItem], state: RefinementState,
                client: LlmClient, max_attempts: int = 3) -> RefinementState:
    """Run the generate/verify/accumulate loop over all feedback items, then
    re-solve the whole day under the accepted constraints.

    Raises RefineError (with the running tally attached to the state) when
    some item exhausts its attempts.
    """
    if max_attempts < 1:
        raise RefineError("max_attempts must be at least 1")
    if not feedback:
        return state
    for item in feedback:
        accepted = False
        for _attempt in range(max_attempts):
            try:
                spec = compile_feedback(item, state, client)
            except SyntacticError:
                state.tally["syntactic_fail"] += 1
                continue
            try:
                candidates = verify_feasible(state, spec)
            except InfeasibleError:
                state.tally["feasibility_fail"] += 1
                continue
            before = intersection_counts(state, item.intersection, item.segment)
            after = intersection_counts(state, item.intersection, item.segment,
                                        solutions=overlay_solutions(state, candidates))
            if not verify_semantic(before, after, item, client, state.network):
                state.tally["semantic_fail"] += 1
                continue
            accept_spec(state, spec, candidates)
            state.iteration = item.k
            state.tally["accepted"] += 1
            accepted = True
            break
        if not accepted:
            raise RefineError(
                f"attempts exhausted for feedback {item.k}; tally: "
                f"{state.tally}")
    state.solutions = solve_day(state.problems, state.config)
    return state


def overlay_solutions(state: RefinementState, candidates: Dict[int, RouteSolution]
             ) -> List[RouteSolution]:
    merged = list(state.solutions)
    for segment, solution in candidates.items():
        merged[segment] = solution
    return merged


def accept_spec(state: RefinementState, spec: ConstraintSpec,
            candidates: Dict[int, RouteSolution]):
    for atom in spec.atoms:
        state.problems[atom.segment].extra_constraints.append(
            HardAtom(atom.location, atom.kind, atom.bound))
    state.accepted.append(spec)
    state.solutions = overlay_solutions(state, candidates)


def read_feedback(file) -> List[FeedbackItem]:
    """Parse a JSON-lines feedback file: {k, segment, intersection, text}."""
    if isinstance(file, (str, Path)):
        lines = Path(file).read_text().splitlines()
    else:
        lines = file.read().splitlines()
    items = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            items.append(FeedbackItem(k=int(doc["k"]), segment=int(doc["segment"]),
                                      intersection=int(doc["intersection"]),
                                      text=str(doc["text"])))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise RefineError(f"bad feedback on line {lineno}: {exc}") from None
    return items
