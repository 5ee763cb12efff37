"""Per-segment route-usage optimization and minute-level distribution.

Each 15-minute segment asks: how many vehicles should use each enumerated
route so that the routes' traversals of the counting locations land inside
the calibration bands? Band misses are charged quadratically through
analytic slack variables, routes that start or end mid-network pay a linear
penalty, and a quadratic drift penalty ties each segment to the previous
one. Slacks are eliminated analytically (the residual of projecting the
location total onto its band), which reduces the problem to a convex
piecewise-quadratic in the integer usage vector alone.

Two solvers: exhaustive enumeration for desk-scale instances, and
relax-round-repair (projected gradient descent, nearest-integer rounding,
greedy +-1 coordinate repair plus a pair-exchange pass on moderate sizes)
for production scale. A second integer program distributes each segment's
vehicles over its 15 minutes while staying close to the previous segment's
minute pattern.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from demandforge import kernels
from demandforge.counts import SEGMENTS_PER_DAY, CountBand
from demandforge.netgraph import IncidenceMatrix

MINUTES_PER_SEGMENT = 15

# Weight that makes hard-bound rows dominate any soft move in the repair
# kernel: a one-unit hard violation must outweigh the largest plausible
# soft-band delta (counts capped at the route upper bound). The continuous
# relaxation uses a milder penalty so projected gradient descent stays
# reasonably conditioned; the repair kernel enforces exactness.
_HARD_WEIGHT = 1e8
_RELAX_WEIGHT = 1e4
_HARD_TOL = 1e-6
_EXACT_AUTO_BUDGET = 2_000_000
# Pair-exchange repair (shift one unit between two routes) escapes the local
# minima single-coordinate moves cannot; the O(n^2) sweep is only run when
# the route count keeps it cheap.
_EXCHANGE_LIMIT = 1500
_EPS = 1e-9


class SolveError(ValueError):
    """Instance outside a solver's supported shape."""


class InfeasibleError(SolveError):
    """Hard constraints admit no nonnegative integer usage vector."""


@dataclass
class SolveConfig:
    lambda_nonfringe: float = 10.0
    lambda_temporal: float = 10.0
    route_upper_bound: int = 2000
    grad_tol: float = 1e-6
    max_iters: int = 100_000
    exact_mode_limit: int = 8
    time_budget_s: float = 60.0
    seed: int = 0

    @classmethod
    def from_json(cls, doc) -> "SolveConfig":
        if isinstance(doc, str):
            doc = json.loads(doc)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise SolveError(f"unknown solver config keys {sorted(extra)}")
        return cls(**doc)

    def to_json(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class HardAtom:
    """One hard bound on a location's traversal total in one segment."""
    location: int
    kind: str            # "lower" | "upper"
    bound: float

    def __post_init__(self):
        if self.kind not in ("lower", "upper"):
            raise SolveError(f"unknown bound kind {self.kind!r}")
        if self.bound < 0:
            raise SolveError("hard bounds must be nonnegative")


@dataclass
class SegmentProblem:
    """One segment's optimization instance."""
    incidence: IncidenceMatrix
    bands_cv: Dict[int, CountBand]
    bands_ld: Dict[int, CountBand]
    nonfringe_ids: frozenset
    lambda_nonfringe: float = 10.0
    lambda_temporal: float = 10.0
    r_prev: Optional[np.ndarray] = None
    extra_constraints: List[HardAtom] = field(default_factory=list)

    def __post_init__(self):
        if self.lambda_nonfringe < 0 or self.lambda_temporal < 0:
            raise SolveError("penalty weights must be nonnegative")
        if self.r_prev is not None and len(self.r_prev) != self.incidence.n_routes:
            raise SolveError("r_prev length does not match route count")


@dataclass
class RouteSolution:
    usage: np.ndarray          # nonnegative integers, one per route
    slack_cv: np.ndarray       # per-location band residuals, CV bands
    slack_ld: np.ndarray
    objective: float
    solver_mode: str           # "exact" | "heuristic"
    solve_time: float


def slack_for(value: float, lower: float, upper: float) -> float:
    """Residual that shifts `value` into [lower, upper]; 0 inside the band.

    This is the unique minimizer of s**2 subject to
    lower <= value + s <= upper.
    """
    if lower > upper:
        raise SolveError(f"empty band [{lower}, {upper}]")
    if value < lower:
        return lower - value
    if value > upper:
        return upper - value
    return 0.0


def _slack_vector(loc_counts: np.ndarray, bands: Dict[int, CountBand]) -> np.ndarray:
    out = np.zeros(len(loc_counts))
    for j, band in bands.items():
        out[j] = slack_for(float(loc_counts[j]), band.lower, band.upper)
    return out


def objective(usage: np.ndarray, r_prev: Optional[np.ndarray],
              problem: SegmentProblem) -> float:
    """Squared slack norms plus the nonfringe and temporal penalties.

    Hard extra constraints are constraints, not cost: they never appear here.
    """
    usage = np.asarray(usage, dtype=np.float64)
    counts = problem.incidence.location_counts(usage)
    total = 0.0
    for bands in (problem.bands_cv, problem.bands_ld):
        for j in sorted(bands):
            band = bands[j]
            s = slack_for(float(counts[j]), band.lower, band.upper)
            total += s * s
    if problem.nonfringe_ids:
        idx = sorted(problem.nonfringe_ids)
        total += problem.lambda_nonfringe * float(usage[idx].sum())
    if r_prev is not None and problem.lambda_temporal > 0:
        diff = usage - np.asarray(r_prev, dtype=np.float64)
        total += problem.lambda_temporal * float((diff * diff).sum())
    return total


def merged_hard_bounds(problem: SegmentProblem) -> Dict[int, Tuple[float, float]]:
    """Tightest (lower, upper) per location over the hard atoms."""
    merged: Dict[int, Tuple[float, float]] = {}
    for atom in problem.extra_constraints:
        lo, hi = merged.get(atom.location, (0.0, math.inf))
        if atom.kind == "lower":
            lo = max(lo, atom.bound)
        else:
            hi = min(hi, atom.bound)
        merged[atom.location] = (lo, hi)
    return merged


def check_hard_bounds(problem: SegmentProblem,
                      upper_bound: int) -> Optional[str]:
    """Fast certificates of hard-constraint infeasibility; None when none
    apply (which does not yet prove feasibility)."""
    entries = problem.incidence.entries
    for j, (lo, hi) in sorted(merged_hard_bounds(problem).items()):
        if lo > hi + _HARD_TOL:
            return f"contradictory bounds [{lo}, {hi}] at location {j}"
        if (math.isfinite(hi)
                and math.ceil(lo - _HARD_TOL) > math.floor(hi + _HARD_TOL)):
            return f"no integer total inside [{lo}, {hi}] at location {j}"
        passing = int(entries[:, j].sum())
        if passing == 0 and lo > 0:
            return f"no route passes location {j} but its total must reach {lo}"
        if lo > passing * upper_bound:
            return (f"location {j} needs {lo} but its {passing} routes cap at "
                    f"{passing * upper_bound}")
    return None


class _Instance:
    """Arrays shared by the relaxation and the repair kernel.

    Constraint "rows" merge the CV bands, LD bands, and hard bounds; hard
    rows carry a weight large enough that the repair kernel always prefers
    fixing a hard violation over any soft gain.
    """

    def __init__(self, problem: SegmentProblem, config: SolveConfig):
        self.problem = problem
        self.config = config
        entries = problem.incidence.entries
        n = problem.incidence.n_routes

        locs: List[int] = []
        lo: List[float] = []
        hi: List[float] = []
        weight: List[float] = []
        for bands in (problem.bands_cv, problem.bands_ld):
            for j in sorted(bands):
                locs.append(j)
                lo.append(bands[j].lower)
                hi.append(bands[j].upper)
                weight.append(1.0)
        self.n_soft = len(locs)
        for j, (blo, bhi) in sorted(merged_hard_bounds(problem).items()):
            locs.append(j)
            lo.append(blo)
            hi.append(bhi)
            weight.append(_HARD_WEIGHT)

        self.row_loc = np.asarray(locs, dtype=np.int64)
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.weight = np.asarray(weight, dtype=np.float64)
        self.relax_weight = np.where(self.weight > 1.0, _RELAX_WEIGHT,
                                     self.weight)
        # rows x routes coefficient matrix; row k is location row_loc[k]
        if len(locs):
            self.M = entries[:, self.row_loc].T.astype(np.float64)
        else:
            self.M = np.zeros((0, n))
        hits = entries[:, self.row_loc].astype(bool) if len(locs) else \
            np.zeros((n, 0), dtype=bool)
        counts_per_route = hits.sum(axis=1)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts_per_route, out=self.indptr[1:])
        self.indices = np.nonzero(hits)[1].astype(np.int64)

        self.linear = np.zeros(n)
        if problem.nonfringe_ids:
            self.linear[sorted(problem.nonfringe_ids)] = problem.lambda_nonfringe
        self.lam_t = problem.lambda_temporal if problem.r_prev is not None else 0.0
        self.prev = (np.asarray(problem.r_prev, dtype=np.float64)
                     if problem.r_prev is not None else np.zeros(n))
        self.prev_int = np.round(self.prev).astype(np.int64)

    def penalized(self, r: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """Relaxation objective: hard rows folded in as weighted band terms."""
        v = self.M @ r
        g = v - np.clip(v, self.lo, self.hi)
        f = float(self.relax_weight @ (g * g)) + float(self.linear @ r)
        if self.lam_t > 0:
            d = r - self.prev
            f += self.lam_t * float(d @ d)
        return f, v, g

    def gradient(self, r: np.ndarray, g: np.ndarray) -> np.ndarray:
        grad = self.M.T @ (2.0 * self.relax_weight * g) + self.linear
        if self.lam_t > 0:
            grad = grad + 2.0 * self.lam_t * (r - self.prev)
        return grad

    def hard_rows_ok(self, values: np.ndarray) -> bool:
        if self.n_soft == len(self.lo):
            return True
        v = values[self.n_soft:]
        return bool(np.all(v >= self.lo[self.n_soft:] - _HARD_TOL)
                    and np.all(v <= self.hi[self.n_soft:] + _HARD_TOL))


def _project_gradient(inst: _Instance, start: np.ndarray, grad_tol: float,
                      max_iters: int, deadline: float) -> np.ndarray:
    """Projected gradient descent on the nonnegative orthant with Armijo
    backtracking; the reduced objective is convex and C1, so the projected
    gradient max-norm is a sound stopping measure.

    The tolerance scales with the largest row weight: heavily weighted hard
    rows inflate the gradient by the same factor, and the result only feeds
    an integer rounding, so chasing absolute 1e-6 there is wasted work.
    """
    r = np.maximum(start.astype(np.float64), 0.0)
    f, _v, g = inst.penalized(r)
    grad = inst.gradient(r, g)
    tol = grad_tol * max(1.0, float(inst.relax_weight.max())
                         if inst.relax_weight.size else 1.0)
    alpha = 1.0
    r_old = grad_old = None
    stall = 0
    for _ in range(max_iters):
        pg = grad.copy()
        pg[(r <= 0.0) & (grad > 0.0)] = 0.0
        if pg.size == 0 or float(np.abs(pg).max()) <= tol:
            break
        if time.monotonic() > deadline:
            break
        if r_old is not None:
            s = r - r_old
            y = grad - grad_old
            sy = float(s @ y)
            if sy > 1e-18:
                alpha = float(s @ s) / sy
        alpha = min(max(alpha, 1e-12), 1e8)
        accepted = False
        for _bt in range(60):
            r_new = np.maximum(r - alpha * grad, 0.0)
            f_new, _v_new, g_new = inst.penalized(r_new)
            if f_new <= f + 1e-4 * float(grad @ (r_new - r)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        stall = stall + 1 if f - f_new <= 1e-12 * max(1.0, abs(f)) else 0
        r_old, grad_old = r, grad
        r, f, g = r_new, f_new, g_new
        grad = inst.gradient(r, g)
        if stall >= 50:
            break
    return r


def _finish(problem: SegmentProblem, usage: np.ndarray, mode: str,
            started: float) -> RouteSolution:
    usage = np.asarray(usage, dtype=np.int64)
    if (usage < 0).any():
        raise SolveError("internal: negative usage")
    counts = problem.incidence.location_counts(usage)
    return RouteSolution(
        usage=usage,
        slack_cv=_slack_vector(counts, problem.bands_cv),
        slack_ld=_slack_vector(counts, problem.bands_ld),
        objective=objective(usage, problem.r_prev, problem),
        solver_mode=mode,
        solve_time=time.monotonic() - started,
    )


def solve_exact(problem: SegmentProblem,
                config: Optional[SolveConfig] = None) -> RouteSolution:
    """Globally optimal usage vector by exhaustive lexicographic enumeration.

    Only valid for small instances: the search space is
    (upper_bound + 1) ** n_routes. Ties resolve to the lexicographically
    smallest usage vector because enumeration runs in lexicographic order
    and only strict improvements replace the incumbent.
    """
    config = config or SolveConfig()
    started = time.monotonic()
    n = problem.incidence.n_routes
    bound = config.route_upper_bound
    if n > config.exact_mode_limit:
        raise SolveError(
            f"instance too large for exact mode: {n} routes > "
            f"{config.exact_mode_limit}")
    if bound > 10:
        raise SolveError(f"route upper bound {bound} too large for exact mode")

    entries = problem.incidence.entries.astype(np.float64)
    base = bound + 1
    total = base ** n
    powers = np.array([base ** (n - 1 - i) for i in range(n)], dtype=np.int64)
    cv_j = np.array(sorted(problem.bands_cv), dtype=np.int64)
    ld_j = np.array(sorted(problem.bands_ld), dtype=np.int64)
    cv_lo = np.array([problem.bands_cv[j].lower for j in cv_j])
    cv_hi = np.array([problem.bands_cv[j].upper for j in cv_j])
    ld_lo = np.array([problem.bands_ld[j].lower for j in ld_j])
    ld_hi = np.array([problem.bands_ld[j].upper for j in ld_j])
    hard = sorted(merged_hard_bounds(problem).items())
    nf = np.zeros(n)
    if problem.nonfringe_ids:
        nf[sorted(problem.nonfringe_ids)] = 1.0
    prev = (np.asarray(problem.r_prev, dtype=np.float64)
            if problem.r_prev is not None else None)

    best_obj = math.inf
    best_r: Optional[np.ndarray] = None
    chunk = 200_000
    for lowmark in range(0, total, chunk):
        codes = np.arange(lowmark, min(lowmark + chunk, total), dtype=np.int64)
        cand = ((codes[:, None] // powers[None, :]) % base).astype(np.float64)
        loc_counts = cand @ entries
        obj = np.zeros(len(codes))
        for j_arr, lo_arr, hi_arr in ((cv_j, cv_lo, cv_hi), (ld_j, ld_lo, ld_hi)):
            if len(j_arr) == 0:
                continue
            vals = loc_counts[:, j_arr]
            gap = np.where(vals < lo_arr, lo_arr - vals,
                           np.where(vals > hi_arr, vals - hi_arr, 0.0))
            obj += (gap * gap).sum(axis=1)
        obj += problem.lambda_nonfringe * (cand @ nf)
        if prev is not None and problem.lambda_temporal > 0:
            diff = cand - prev[None, :]
            obj += problem.lambda_temporal * (diff * diff).sum(axis=1)
        for j, (blo, bhi) in hard:
            vals = loc_counts[:, j]
            obj[(vals < blo - _HARD_TOL) | (vals > bhi + _HARD_TOL)] = math.inf
        k = int(np.argmin(obj))
        if obj[k] < best_obj:
            best_obj = float(obj[k])
            best_r = cand[k].astype(np.int64)
    if best_r is None or not math.isfinite(best_obj):
        raise InfeasibleError("extra constraints exclude every usage vector")
    return _finish(problem, best_r, "exact", started)


def solve_heuristic(problem: SegmentProblem,
                    config: Optional[SolveConfig] = None) -> RouteSolution:
    """Relax-round-repair solver for production-scale instances.

    The continuous relaxation is solved by projected gradient descent (hard
    bounds enter as weighted band terms; unanchored segments start from a
    band-centering point), the result is rounded to the nearest integers,
    and greedy best-improvement repair runs until no +-1 move, nor one-unit
    transfer between two routes on moderate sizes, lowers the hard-weighted
    objective. Repair never worsens the penalized objective of the rounded
    point. Deterministic for a fixed problem and config.
    """
    config = config or SolveConfig()
    started = time.monotonic()
    deadline = started + config.time_budget_s
    reason = check_hard_bounds(problem, config.route_upper_bound)
    if reason is not None:
        raise InfeasibleError(reason)

    inst = _Instance(problem, config)
    n = problem.incidence.n_routes
    if problem.r_prev is not None:
        warm = inst.prev
    else:
        warm = _centered_start(inst, config, deadline)
    relaxed = _project_gradient(inst, warm, config.grad_tol,
                                config.max_iters, deadline)
    usage = np.floor(relaxed + 0.5).astype(np.int64)
    np.clip(usage, 0, config.route_upper_bound, out=usage)
    usage = _repair(inst, usage, config)

    values = inst.M @ usage.astype(np.float64)
    if not inst.hard_rows_ok(values):
        # Rounding stranded a hard row; retry from a feasibility-first point.
        usage = _rescue_hard(inst, config, deadline)
    return _finish(problem, usage, "heuristic", started)


def _centered_start(inst: _Instance, config: SolveConfig,
                    deadline: float) -> np.ndarray:
    """Warm start for an unanchored segment: aim for the band midpoints.

    Every zero-slack point is optimal, but the first segment anchors the
    whole temporal chain, so landing mid-band instead of on an arbitrary
    band edge leaves later segments room to breathe. Solved with the same
    machinery by collapsing each band to its midpoint.
    """
    n = len(inst.linear)
    if inst.M.shape[0] == 0:
        return np.zeros(n)
    centers = np.where(np.isfinite(inst.hi), (inst.lo + inst.hi) / 2.0, inst.lo)
    centered = _Instance.__new__(_Instance)
    centered.__dict__.update(inst.__dict__)
    centered.lo = centers
    centered.hi = centers
    return _project_gradient(centered, np.zeros(n), config.grad_tol,
                             config.max_iters, deadline)


def _repair(inst: _Instance, usage: np.ndarray, config: SolveConfig) -> np.ndarray:
    """Greedy single-coordinate repair, alternated with pair exchanges.

    The kernel handles +-1 moves on one route; a move of one unit from route
    k to route i (which single-coordinate descent cannot see as improving
    when the two directions only pay off together) is applied from a
    vectorized O(n^2) scan when the instance is small enough for that to be
    cheap. Both strictly decrease the weighted objective, so the loop
    terminates.
    """
    usage = usage.astype(np.int64).copy()
    values = inst.M @ usage.astype(np.float64)
    n = len(usage)
    for _round in range(10_000):
        kernels.greedy_repair(
            inst.indptr, inst.indices, inst.lo, inst.hi, inst.weight, values,
            usage, config.route_upper_bound, inst.linear, inst.lam_t,
            inst.prev_int, 1 if inst.problem.r_prev is not None else 0,
            max(10_000, 20 * n))
        if n > _EXCHANGE_LIMIT or not _exchange_once(inst, usage, values,
                                                     config):
            break
    return usage


def _exchange_once(inst: _Instance, usage: np.ndarray, values: np.ndarray,
                   config: SolveConfig) -> bool:
    """Apply the best strictly improving one-unit transfer between two
    routes, if any. Updates `usage` and `values` in place."""
    n = len(usage)
    if n < 2 or inst.M.shape[0] == 0:
        return False
    d2 = inst.weight * _band_sq_np(values, inst.lo, inst.hi)
    up = inst.weight * _band_sq_np(values + 1.0, inst.lo, inst.hi) - d2
    down = inst.weight * _band_sq_np(values - 1.0, inst.lo, inst.hi) - d2
    curvature = up + down
    hits = inst.M.T                      # (n, rows) 0/1 coefficients
    gain_up = hits @ up + inst.linear
    gain_down = hits @ down - inst.linear
    if inst.lam_t > 0 and inst.problem.r_prev is not None:
        drift = (usage - inst.prev_int).astype(np.float64)
        gain_up = gain_up + inst.lam_t * (2.0 * drift + 1.0)
        gain_down = gain_down + inst.lam_t * (-2.0 * drift + 1.0)
    # delta of (+1 on i, -1 on k): independent gains minus the double-counted
    # curvature on rows both routes traverse
    shared = (hits * curvature) @ hits.T
    delta = gain_up[:, None] + gain_down[None, :] - shared
    delta[np.arange(n), np.arange(n)] = np.inf
    delta[usage + 1 > config.route_upper_bound, :] = np.inf
    delta[:, usage < 1] = np.inf
    flat = int(np.argmin(delta))
    i, k = divmod(flat, n)
    if not delta[i, k] < -_EPS:
        return False
    usage[i] += 1
    usage[k] -= 1
    values[inst.indices[inst.indptr[i]:inst.indptr[i + 1]]] += 1.0
    values[inst.indices[inst.indptr[k]:inst.indptr[k + 1]]] -= 1.0
    return True


def _band_sq_np(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    gap = np.where(values < lo, lo - values,
                   np.where(values > hi, values - hi, 0.0))
    return gap * gap


def _rescue_hard(inst: _Instance, config: SolveConfig,
                 deadline: float) -> np.ndarray:
    """Second chance when rounding broke a hard bound: minimize the hard
    violation alone, restart the full repair from that point, and certify
    infeasibility if even the continuous relaxation cannot reach zero."""
    problem = inst.problem
    hard_only = replace(problem, bands_cv={}, bands_ld={},
                        lambda_nonfringe=0.0, lambda_temporal=0.0, r_prev=None)
    feas_inst = _Instance(hard_only, config)
    point = _project_gradient(feas_inst, np.zeros(len(inst.linear)),
                              config.grad_tol, config.max_iters, deadline)
    values = feas_inst.M @ point
    gaps = np.abs(values - np.clip(values, feas_inst.lo, feas_inst.hi))
    if gaps.size and float(gaps.max()) > 1e-3:
        raise InfeasibleError(
            "hard bounds unsatisfiable even in the continuous relaxation")
    usage = np.floor(point + 0.5).astype(np.int64)
    np.clip(usage, 0, config.route_upper_bound, out=usage)
    usage = _repair(inst, usage, config)
    values = inst.M @ usage.astype(np.float64)
    if not inst.hard_rows_ok(values):
        raise InfeasibleError(
            "greedy repair could not satisfy the hard bounds at integer "
            "resolution")
    return usage


def solve_segment(problem: SegmentProblem, config: Optional[SolveConfig] = None,
                  mode: str = "auto") -> RouteSolution:
    """Dispatch one segment to the exact or heuristic solver."""
    config = config or SolveConfig()
    if mode == "exact":
        return solve_exact(problem, config)
    if mode == "heuristic":
        return solve_heuristic(problem, config)
    if mode != "auto":
        raise SolveError(f"unknown solver mode {mode!r}")
    n = problem.incidence.n_routes
    if (n <= config.exact_mode_limit and config.route_upper_bound <= 10
            and (config.route_upper_bound + 1) ** n <= _EXACT_AUTO_BUDGET):
        return solve_exact(problem, config)
    return solve_heuristic(problem, config)


def solve_day(problems: Sequence[SegmentProblem],
              config: Optional[SolveConfig] = None, mode: str = "auto",
              progress=None) -> List[RouteSolution]:
    """Solve segments in order, feeding each solution into the next
    segment's temporal penalty. The first segment has no temporal term."""
    config = config or SolveConfig()
    solutions: List[RouteSolution] = []
    prev: Optional[np.ndarray] = None
    for t, problem in enumerate(problems):
        problem.r_prev = prev.copy() if prev is not None else None
        solution = solve_segment(problem, config, mode)
        solutions.append(solution)
        prev = solution.usage
        if progress is not None:
            progress(t + 1, len(problems))
    return solutions


@dataclass
class MinuteSchedule:
    """Integer minute-by-minute distribution of one segment's usages."""
    c: np.ndarray  # shape (n_routes, 15)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.int64)
        if self.c.ndim != 2 or self.c.shape[1] != MINUTES_PER_SEGMENT:
            raise SolveError("minute schedule must be n_routes x 15")
        if (self.c < 0).any():
            raise SolveError("minute schedule must be nonnegative")

    def row_sums(self) -> np.ndarray:
        return self.c.sum(axis=1)


def _distribute_row(target_sum: int, prev_row: np.ndarray) -> np.ndarray:
    """Closest nonnegative integer minute row to `prev_row` with the given
    sum. Exact integer arithmetic throughout: scaling by 15 turns the
    uniform-shift targets into integers, largest-remainder apportionment
    rounds them, and a greedy exchange clears any negatives."""
    m = MINUTES_PER_SEGMENT
    diff = int(target_sum) - int(prev_row.sum())
    scaled = m * prev_row.astype(np.int64) + diff      # 15x the real targets
    base = scaled // m
    remainder = scaled - m * base                       # in 0..14
    deficit = int(target_sum) - int(base.sum())
    order = sorted(range(m), key=lambda i: (-int(remainder[i]), i))
    row = base.copy()
    for i in order[:deficit]:
        row[i] += 1
    while (row < 0).any():
        needy = int(np.argmax(row < 0))
        row[needy] += 1
        # Give up a unit where it costs least: the minute furthest above its
        # target (maximal 15*c - scaled), earliest minute on ties.
        donors = np.where(row >= 1)[0]
        margins = m * row[donors] - scaled[donors]
        row[donors[int(np.argmax(margins))]] -= 1
    return row


def distribute_minutes(usage: np.ndarray,
                       c_prev: Optional[MinuteSchedule]) -> MinuteSchedule:
    """Distribute each route's segment total over 15 minutes.

    Without a previous schedule the split is uniform (largest-remainder,
    earliest minutes take the remainder). With one, each route's row is the
    integer minimizer of the squared distance to the previous row subject to
    the new total; rows are independent, so per-route solutions compose into
    the joint optimum.
    """
    usage = np.asarray(usage, dtype=np.int64)
    if (usage < 0).any():
        raise SolveError("usage must be nonnegative")
    n = len(usage)
    if c_prev is not None and c_prev.c.shape[0] != n:
        raise SolveError("previous schedule has a different route count")
    rows = np.zeros((n, MINUTES_PER_SEGMENT), dtype=np.int64)
    for i in range(n):
        r = int(usage[i])
        if c_prev is None:
            q, rem = divmod(r, MINUTES_PER_SEGMENT)
            rows[i, :] = q
            rows[i, :rem] += 1
        else:
            rows[i] = _distribute_row(r, c_prev.c[i])
    schedule = MinuteSchedule(c=rows)
    if not np.array_equal(schedule.row_sums(), usage):
        raise SolveError("internal: minute rows do not sum to the usages")
    return schedule


def distribute_day(solutions: Sequence[RouteSolution]) -> List[MinuteSchedule]:
    """Chain minute distributions across a day of solved segments."""
    schedules: List[MinuteSchedule] = []
    prev: Optional[MinuteSchedule] = None
    for solution in solutions:
        prev = distribute_minutes(solution.usage, prev)
        schedules.append(prev)
    return schedules


def fringe_share(usage: np.ndarray, nonfringe_ids: Iterable[int]) -> float:
    """Fraction of vehicles on routes that both start and end on the fringe;
    1.0 for an empty schedule."""
    usage = np.asarray(usage, dtype=np.int64)
    total = int(usage.sum())
    if total == 0:
        return 1.0
    nonfringe = int(usage[sorted(nonfringe_ids)].sum()) if nonfringe_ids else 0
    return (total - nonfringe) / total


def segment_summary(solution: RouteSolution, problem: SegmentProblem) -> dict:
    """JSON-ready per-segment solve summary."""
    return {
        "objective": solution.objective,
        "slack_norms": {
            "cv": float(np.linalg.norm(solution.slack_cv)),
            "ld": float(np.linalg.norm(solution.slack_ld)),
        },
        "fringe_share": fringe_share(solution.usage, problem.nonfringe_ids),
        "solve_time": solution.solve_time,
        "solver_mode": solution.solver_mode,
    }


def solutions_to_csv(solutions: Sequence[RouteSolution]) -> str:
    """Dump a day of solutions as `route,segment,count` (nonzero rows)."""
    lines = ["route,segment,count"]
    for t, solution in enumerate(solutions):
        for i in np.nonzero(solution.usage)[0]:
            lines.append(f"{int(i)},{t},{int(solution.usage[i])}")
    return "\n".join(lines) + "\n"


def usages_from_csv(text: str, n_routes: int,
                    n_segments: int = SEGMENTS_PER_DAY) -> np.ndarray:
    """Inverse of `solutions_to_csv`: (n_segments, n_routes) usage matrix."""
    out = np.zeros((n_segments, n_routes), dtype=np.int64)
    lines = text.strip().splitlines()
    if lines and lines[0].strip() != "route,segment,count":
        raise SolveError("solution CSV must start with 'route,segment,count'")
    for line in lines[1:]:
        route_s, seg_s, count_s = line.split(",")
        out[int(seg_s), int(route_s)] = int(count_s)
    return out
